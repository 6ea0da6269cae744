"""``idforge`` command line.

Subcommands: gen-embeddings, discover, compare, simulate, report, replay.
Every flag can also come from an environment variable ``IDFORGE_<FLAG>``
(upper case, dashes as underscores); explicit flags win. Each run writes a
JSON manifest whose ``argv`` replays it exactly.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, formats, svg
from .baselines import (
    DEFAULT_MIN_PTS,
    DEFAULT_SHRINKAGE,
    NOISE,
    dbscan,
    filter_by_labels,
    filter_by_scores,
    lof_scores,
    mahalanobis_compactness,
)
from .discovery import DiscoveryConfig, EmbeddingMatrix, discover_identity, naive_average
from .errors import ConfigError, IdforgeError, ParseError
from .injection import InjectionConfig
from .story import SimulationConfig, prompt_metrics, simulate_story, sweep
from .synthetic import SyntheticEmbeddingConfig, generate_embeddings

ENV_PREFIX = "IDFORGE_"
KERNEL_FORMULA = "K_i = floor((t' - i) / t' * k_max + 0.5)"
METHODS = ("naive", "discovery", "lof", "dbscan")
SWEEP_METRICS = ("identity_correlation", "background_deviation", "boundary_discontinuity")


def _int_list(text):
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _ratio(text):
    return float(text)


def _add_discovery_flags(p):
    p.add_argument("--ratio", type=_ratio, default=0.6, help="keep fraction per round")
    p.add_argument("--iters", type=int, default=3, help="filtering rounds")
    p.add_argument("--topk", type=int, default=None, help="singular directions kept (default: spectral gap)")
    p.add_argument("--k-rule", choices=("gap", "energy"), default="gap")
    p.add_argument("--min-keep", type=int, default=1)
    p.add_argument("--normalize", action="store_true", help="unit-normalize embeddings first")


def _discovery_config(args):
    return DiscoveryConfig(
        k=args.topk, k_rule=args.k_rule, ratio=args.ratio, iters=args.iters,
        min_keep=args.min_keep, normalize=args.normalize,
    )


def build_parser():
    parser = argparse.ArgumentParser(prog="idforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-embeddings", help="write synthetic identity embedding sets")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--d", type=int, default=512)
    g.add_argument("--m", type=int, default=64)
    g.add_argument("--sigma-in", type=float, default=0.15)
    g.add_argument("--contamination", type=float, default=0.3)
    g.add_argument("--identities", type=int, default=1)
    g.add_argument("--subspace-dim", type=int, default=8)
    g.add_argument("--ambient-sigma", type=float, default=0.01)
    g.add_argument("--distractors", type=int, default=12)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--format", choices=("text", "bin"), default="text")

    d = sub.add_parser("discover", help="run iterative identity discovery on one file")
    d.add_argument("input")
    d.add_argument("--out", default=None, help="report path (default: <input>.report.json)")
    _add_discovery_flags(d)

    c = sub.add_parser("compare", help="compare discovery with naive/LOF/DBSCAN filtering")
    c.add_argument("inputs", nargs="+", help="embedding files or directories")
    c.add_argument("--out", required=True, help="CSV path")
    _add_discovery_flags(c)
    c.add_argument("--shrinkage", type=float, default=DEFAULT_SHRINKAGE)
    c.add_argument("--lof-k", type=int, default=None)
    c.add_argument("--eps", type=float, default=None)
    c.add_argument("--min-pts", type=int, default=DEFAULT_MIN_PTS)

    s = sub.add_parser("simulate", help="toy story: discovery + re-denoising per prompt")
    s.add_argument("story", help="story JSON")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--t-prime", type=int, default=40)
    s.add_argument("--k-max", type=int, default=50)
    s.add_argument("--latent-side", type=int, default=32)
    s.add_argument("--steps", type=int, default=50, help="DDIM sampling steps")
    s.add_argument("--seed", type=int, default=None, help="override the story seed")
    s.add_argument("--spread", type=float, default=0.5, help="identity generator spread")
    s.add_argument("--correlation-length", type=float, default=3.0)
    s.add_argument("--denoise-cached", action="store_true",
                   help="identity denoisers read the cached latent, not the composite")
    s.add_argument("--sweep-t-prime", type=_int_list, default=None,
                   help="also write sweep.csv over these t' values, e.g. 10,20,30,40,50")
    s.add_argument("--sweep-k-max", type=_int_list, default=None)
    s.add_argument("--format", choices=("text", "bin"), default="bin")
    _add_discovery_flags(s)

    r = sub.add_parser("report", help="render SVG charts from compare/sweep CSVs")
    r.add_argument("csvs", nargs="+")
    r.add_argument("--out", required=True, help="output directory")

    rp = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    rp.add_argument("manifest")
    return parser


def _subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def _apply_env(parser, environ):
    """Turn ``IDFORGE_*`` variables into flag defaults."""
    for sp in _subparsers(parser).values():
        for action in sp._actions:
            if not action.option_strings or action.dest == "help":
                continue
            key = ENV_PREFIX + action.dest.upper()
            if key not in environ:
                continue
            raw = environ[key]
            if isinstance(action, argparse._StoreTrueAction):
                value = raw.strip().lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                try:
                    value = action.type(raw)
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    raise ConfigError(f"{key}: {exc}") from None
            else:
                value = raw
            if action.choices is not None and value not in action.choices:
                raise ConfigError(f"{key}={raw!r} not in {sorted(action.choices)}")
            action.default = value
            if action.required:
                action.required = False


def _resolved_argv(sp, args):
    """Explicit argv equivalent to the parsed namespace (env folded in)."""
    argv = [args.command]
    for action in sp._actions:
        if action.dest in ("help", "command"):
            continue
        value = getattr(args, action.dest, None)
        if not action.option_strings:
            argv += [str(v) for v in value] if isinstance(value, list) else [str(value)]
            continue
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):
            if value:
                argv.append(flag)
        elif value is not None:
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            argv += [flag, str(value)]
    return argv


def _expand_inputs(paths):
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files += sorted(x for x in p.iterdir() if x.suffix in (".emb", ".embf"))
        else:
            files.append(p)
    if not files:
        raise ConfigError("no embedding files found")
    return files


def _emb_ext(fmt):
    return ".emb" if fmt == "text" else ".embf"


def cmd_gen_embeddings(args):
    cfg = SyntheticEmbeddingConfig(
        d=args.d, m=args.m, sigma_in=args.sigma_in, contamination=args.contamination,
        num_identities=args.identities, seed=args.seed, subspace_dim=args.subspace_dim,
        ambient_sigma=args.ambient_sigma, num_distractors=args.distractors,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for s in generate_embeddings(cfg):
        path = out / f"identity_{s.identity:03d}{_emb_ext(args.format)}"
        written += formats.write_embeddings(path, s.embeddings.values, s.inlier, args.format)
    print(f"wrote {cfg.num_identities} identity set(s) of {cfg.m}x{cfg.d} to {out}")
    return {"inputs": [], "outputs": written, "manifest": out / "manifest.json", "config": cfg.to_dict()}


def _report_dict(report, cfg, m):
    return {
        "config": {"k": cfg.k, "k_rule": cfg.k_rule, "ratio": cfg.ratio, "iters": cfg.iters,
                   "min_keep": cfg.min_keep, "normalize": cfg.normalize},
        "m": m,
        "retained": report.retained,
        "retained_fraction": report.retained_fraction,
        "kept_ids": list(report.kept_ids),
        "final_embedding": [float(x) for x in report.final_embedding],
        "iterations": [
            {"k": r.k, "kept_ids": list(r.kept_ids), "removed_ids": list(r.removed_ids),
             "errors": [float(x) for x in r.errors]}
            for r in report.iterations
        ],
    }


def cmd_discover(args):
    cfg = _discovery_config(args)
    path = Path(args.input)
    values, _ = formats.read_embeddings(path)
    e = EmbeddingMatrix(values)
    report = discover_identity(e, cfg)
    out = Path(args.out) if args.out else path.with_name(path.name + ".report.json")
    out.write_text(json.dumps(_report_dict(report, cfg, e.m), indent=1) + "\n")
    print(f"retained {report.retained}/{e.m} ({report.retained_fraction:.6f})")
    return {"inputs": [path], "outputs": [out], "manifest": out.with_name(out.name + ".manifest.json"),
            "config": _report_dict(report, cfg, e.m)["config"]}


def _precision_recall(kept, inlier):
    if inlier is None:
        return "", ""
    kept = np.asarray(kept, dtype=int)
    hits = int(inlier[kept].sum())
    total = int(inlier.sum())
    return hits / len(kept), (hits / total if total else float("nan"))


def compare_methods(e, inlier, cfg, shrinkage=DEFAULT_SHRINKAGE, lof_k=None, eps=None, min_pts=DEFAULT_MIN_PTS):
    """Retained rows and compactness for each method on one embedding set.

    Compactness uses the covariance of the full set ``e`` for every method,
    so all subsets are measured in the same metric. LOF keeps as many rows
    as discovery; DBSCAN keeps every non-noise row (all rows if fewer than
    two survive).
    """
    report = discover_identity(e, cfg)
    kept = {
        "naive": list(range(e.m)),
        "discovery": [e.source_ids.index(i) for i in report.kept_ids],
    }
    lof = filter_by_scores(e, lof_scores(e, lof_k), report.retained)
    kept["lof"] = [e.source_ids.index(i) for i in lof.source_ids]
    labels = dbscan(e, eps, min_pts)
    non_noise = np.flatnonzero(labels.labels != NOISE)
    kept["dbscan"] = list(non_noise) if non_noise.size >= 2 else list(range(e.m))
    rows = []
    for method in METHODS:
        idx = kept[method]
        subset = e.take(idx)
        compact = mahalanobis_compactness(subset, shrinkage, reference=e) if len(idx) >= 2 else 0.0
        precision, recall = _precision_recall(idx, inlier)
        rows.append({
            "method": method, "retained": len(idx), "compactness": compact,
            "shrinkage": shrinkage, "precision": precision, "recall": recall,
        })
    return rows, report


def cmd_compare(args):
    cfg = _discovery_config(args)
    files = _expand_inputs(args.inputs)
    rows = []
    for path in files:
        values, inlier = formats.read_embeddings(path)
        e = EmbeddingMatrix(values)
        method_rows, _ = compare_methods(e, inlier, cfg, args.shrinkage, args.lof_k, args.eps, args.min_pts)
        for r in method_rows:
            rows.append({"identity": path.stem, **r})
    out = Path(args.out)
    formats.write_csv(out, rows)
    print(f"compared {len(files)} identity set(s); wrote {out}")
    return {"inputs": files, "outputs": [out], "manifest": out.with_name(out.name + ".manifest.json"),
            "config": {"shrinkage": args.shrinkage, "lof_k": args.lof_k, "eps": args.eps, "min_pts": args.min_pts}}


def simulation_config(args):
    return SimulationConfig(
        latent_side=args.latent_side,
        t=args.steps,
        discovery=_discovery_config(args),
        injection=InjectionConfig(start_t_prime=args.t_prime, k_max=args.k_max,
                                  denoise_cached=args.denoise_cached),
        identity_spread=args.spread,
        identity_correlation_length=args.correlation_length,
    )


def cmd_simulate(args):
    spec = formats.read_story(args.story)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    cfg = simulation_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    chars, results = simulate_story(spec, cfg)
    written = []
    ext = _emb_ext(args.format)
    summary = []
    for index, res in enumerate(results):
        pdir = out / f"prompt_{index:02d}"
        pdir.mkdir(exist_ok=True)
        written.append(formats.write_latent(pdir / f"template{ext}", res.template, args.format))
        written.append(formats.write_latent(pdir / f"output{ext}", res.output, args.format))
        for slot, m in enumerate(res.masks.characters):
            written.append(formats.write_mask(pdir / f"mask_{slot}.pgm", m))
        written.append(formats.write_mask(pdir / "background.pgm", res.masks.background))
        if res.diagnostics:
            steps = [{**d, "character_cells": ";".join(map(str, d["character_cells"]))} for d in res.diagnostics]
            written.append(formats.write_csv(pdir / "steps.csv", steps))
        row = {"prompt": index, "characters": ";".join(map(str, res.characters))}
        row.update(prompt_metrics(res.output, res.template, res.latent_masks, res.targets))
        summary.append(row)
    written.append(formats.write_csv(out / "summary.csv", summary))
    written.append(formats.write_csv(out / "characters.csv", [
        {"character": j, "description": c.description, "retained": c.retained, "identity_seed": c.identity_seed}
        for j, c in enumerate(chars)
    ] or [{"character": "", "description": "", "retained": "", "identity_seed": ""}]))
    if args.sweep_t_prime:
        rows = sweep(spec, cfg, tuple(args.sweep_t_prime), tuple(args.sweep_k_max) if args.sweep_k_max else None)
        written.append(formats.write_csv(out / "sweep.csv", rows))
    print(f"simulated {len(results)} prompt(s) with {len(chars)} character(s); outputs in {out}")
    return {"inputs": [Path(args.story)], "outputs": written, "manifest": out / "manifest.json",
            "config": {"story": spec.to_dict(), "kernel_schedule": KERNEL_FORMULA}}


def _mean_by(rows, key, value):
    groups = {}
    for r in rows:
        if isinstance(r.get(value), float) and not np.isnan(r[value]):
            groups.setdefault(r[key], []).append(r[value])
    return {k: float(np.mean(v)) for k, v in groups.items()}


def cmd_report(args):
    out = Path(args.out)
    charts = []
    for path in map(Path, args.csvs):
        rows = formats.read_csv(path)
        if not rows:
            raise ParseError("CSV has no data rows", path)
        cols = set(rows[0])
        if {"method", "compactness"} <= cols:
            groups = list(dict.fromkeys(str(r.get("identity", "all")) for r in rows))
            methods = list(dict.fromkeys(r["method"] for r in rows))
            series = {}
            for mth in methods:
                by = {str(r.get("identity", "all")): r["compactness"] for r in rows if r["method"] == mth}
                series[mth] = [float(by.get(g, 0.0)) for g in groups]
            charts.append((out / f"{path.stem}_compactness.svg",
                           svg.bar_chart("Mahalanobis compactness (lower is tighter)", groups, series)))
        elif "t_prime" in cols:
            xs = sorted({r["t_prime"] for r in rows})
            kms = sorted({r["k_max"] for r in rows}) if "k_max" in cols else [None]
            series = {}
            for km in kms:
                sel = [r for r in rows if km is None or r["k_max"] == km]
                for metric in SWEEP_METRICS:
                    if metric not in cols:
                        continue
                    means = _mean_by(sel, "t_prime", metric)
                    name = metric if len(kms) == 1 else f"{metric} (k_max={km:g})"
                    series[name] = [means.get(x, float("nan")) for x in xs]
            if not series:
                raise ParseError("sweep CSV has no metric columns", path)
            charts.append((out / f"{path.stem}_sweep.svg", svg.line_chart("Re-denoising start sweep", xs, series)))
        else:
            raise ParseError("unrecognized CSV: need method/compactness or t_prime columns", path)
    out.mkdir(parents=True, exist_ok=True)
    for target, text in charts:
        target.write_text(text)
    print(f"wrote {len(charts)} chart(s) to {out}")
    return {"inputs": [Path(p) for p in args.csvs], "outputs": [t for t, _ in charts],
            "manifest": out / "manifest.json", "config": {}}


COMMANDS = {
    "gen-embeddings": cmd_gen_embeddings,
    "discover": cmd_discover,
    "compare": cmd_compare,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def _write_manifest(result, argv, command, elapsed):
    outputs = [str(p) for p in result["outputs"]]
    missing = [p for p in outputs if not Path(p).exists()]
    if missing:
        raise IdforgeError(f"outputs missing after run: {missing}")
    manifest = {
        "tool": "idforge",
        "version": __version__,
        "command": command,
        "argv": argv,
        "config": result.get("config", {}),
        "inputs": [str(p) for p in result["inputs"]],
        "outputs": outputs,
        "timing_seconds": round(elapsed, 6),
        "format_versions": formats.FORMAT_VERSIONS,
    }
    path = Path(result["manifest"])
    path.write_text(json.dumps(manifest, indent=1, default=str) + "\n")
    return path


def run(argv=None, environ=None):
    """Parse and execute; returns the process exit code."""
    environ = os.environ if environ is None else environ
    parser = build_parser()
    try:
        _apply_env(parser, environ)
        args = parser.parse_args(argv)
        if args.command == "replay":
            manifest = json.loads(Path(args.manifest).read_text())
            return run(manifest["argv"], environ={})
        sp = _subparsers(parser)[args.command]
        resolved = _resolved_argv(sp, args)
        start = time.perf_counter()
        result = COMMANDS[args.command](args)
        _write_manifest(result, resolved, args.command, time.perf_counter() - start)
        return 0
    except IdforgeError as exc:
        print(f"idforge: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"idforge: error: {exc}", file=sys.stderr)
        return 2


def main(argv=None):
    try:
        code = run(argv)
    except SystemExit as exc:  # argparse usage errors exit with 2
        code = exc.code if isinstance(exc.code, int) else 2
    sys.exit(code)


if __name__ == "__main__":
    main()
