"""Trim a contaminated embedding set down to its dominant identity."""
import numpy as np

from idforge.discovery import discover_identity, naive_average
from idforge.synthetic import SyntheticEmbeddingConfig, generate_embeddings, identity_centers


def main():
    cfg = SyntheticEmbeddingConfig(seed=7)
    sample = generate_embeddings(cfg)[0]
    center = identity_centers(cfg)[0]
    report = discover_identity(sample.embeddings)
    print(f"{sample.embeddings.m} embeddings, {int((~sample.inlier).sum())} from other people")
    for p, it in enumerate(report.iterations, 1):
        precision = sample.inlier[list(it.kept_ids)].mean()
        print(f"round {p}: rank {it.k}, kept {len(it.kept_ids)}, inlier precision {precision:.3f}")
    for name, vec in (("naive mean", naive_average(sample.embeddings)), ("discovered", report.final_embedding)):
        cos = vec @ center / np.linalg.norm(vec)
        print(f"{name:>10}: cosine to the true identity {cos:.4f}")


if __name__ == "__main__":
    main()
