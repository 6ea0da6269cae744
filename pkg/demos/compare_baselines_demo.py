"""Compactness of the retained set for discovery, naive averaging, LOF and DBSCAN."""
import numpy as np

from idforge.cli import METHODS, compare_methods
from idforge.discovery import DiscoveryConfig
from idforge.synthetic import SyntheticEmbeddingConfig, generate_embeddings


def main(seeds=10):
    table = {m: [] for m in METHODS}
    for seed in range(seeds):
        s = generate_embeddings(SyntheticEmbeddingConfig(seed=seed))[0]
        rows, _ = compare_methods(s.embeddings, s.inlier, DiscoveryConfig())
        for r in rows:
            table[r["method"]].append((r["compactness"], r["retained"], r["precision"]))
    print(f"{'method':>10} {'compactness':>12} {'retained':>9} {'precision':>10}")
    for method, vals in table.items():
        c, n, p = np.array(vals, dtype=float).mean(axis=0)
        print(f"{method:>10} {c:12.3f} {n:9.1f} {p:10.3f}")


if __name__ == "__main__":
    main()
