"""Command-line surface.

Subcommands: ``fit`` (single penalized fit), ``cv`` (grid selection),
``path`` (regularization path), ``simulate`` (synthetic data files),
``study`` (replicated estimator comparison), and ``summarize`` (the full
replication pipeline with per-location summaries).

Penalty grids are given as ``lo:hi:n`` on a base-10 log scale. A plain
``key = value`` config file can supply any long flag (keys match the
flag names); explicit flags win. All randomness derives from ``--seed``.
Exit codes: 0 success, 2 validation failure, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .graph import laplacian
from .optimizer import PenaltyConfig, SolverError, fit
from .pipeline import (
    RunConfig,
    export_summaries,
    ingest,
    replicate,
    write_manifest,
    write_observations,
)
from .simlab import (
    PATTERNS,
    PHI_RANGES,
    SimConfig,
    comparison_study,
    default_pattern,
    simulate_dataset,
    write_study_csv,
)
from .tuning import GridSpec, cross_validate, solution_path
from .tweedie import NumericRangeError

VARIANT_ALIASES = {"gl": "gl", "ridge": "ridge", "mle": "unpenalized"}


def parse_grid(text):
    """'lo:hi:n' in log10 -> (lo, hi, n); 'none' pins lambda2 to zero."""
    if text.strip().lower() == "none":
        return None
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected lo:hi:n, got {text!r}")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric grid in {text!r}") from None
    return (lo, hi, n)


CONFIG_TYPES = {
    "obs": str, "edges": str, "blocks": str, "coords": str, "config": str,
    "p": float, "grid_l1": parse_grid, "grid_l2": parse_grid,
    "folds": int, "reps": int, "train_frac": float, "seed": int,
    "variant": str, "approx": lambda v: v.lower() in ("1", "true", "yes"),
    "out_dir": str, "format": str, "l1": float, "l2": float,
    "pattern": str, "patterns": str, "n": int, "zero_target": float,
    "zero_targets": str, "mix": float, "intercept": lambda v: v.lower() in ("1", "true", "yes"),
    "workers": int,
}


def read_config(path):
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key = value'")
            key, _, value = line.partition("=")
            dest = key.strip().replace("-", "_")
            if dest not in CONFIG_TYPES:
                raise ValueError(f"{path}:{ln}: unknown config key {key.strip()!r}")
            entries[dest] = CONFIG_TYPES[dest](value.strip())
    return entries


def build_parser():
    parser = argparse.ArgumentParser(prog="spatweedie", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    children = []

    def add_io(p, obs=True, coords_required=False):
        if obs:
            p.add_argument("--obs", required=False, help="observation CSV")
        p.add_argument("--edges", required=False, help="edge list file")
        p.add_argument("--blocks", help="block (state) assignment file")
        p.add_argument("--coords", required=coords_required, help="label,lon,lat file")
        p.add_argument("--config", help="key = value config file; flags override")
        p.add_argument("--out-dir", dest="out_dir", default="out")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--p", type=float, default=1.5, help="index parameter")
        p.add_argument("--approx", action="store_true",
                       help="block-diagonal Laplacian approximation")

    f = _child(children, sub, "fit", help="one fit at fixed penalties")
    add_io(f)
    f.add_argument("--l1", type=float, default=0.0, help="ridge weight")
    f.add_argument("--l2", type=float, default=0.0, help="smoothing weight")
    f.add_argument("--variant", choices=sorted(VARIANT_ALIASES), default="gl")
    f.add_argument("--intercept", action="store_true")

    c = _child(children, sub, "cv", help="cross-validated penalty selection")
    add_io(c)
    c.add_argument("--grid-l1", dest="grid_l1", type=parse_grid, default=(-5.0, 2.0, 10))
    c.add_argument("--grid-l2", dest="grid_l2", type=parse_grid, default=(-5.0, 5.0, 10))
    c.add_argument("--folds", type=int, default=5)
    c.add_argument("--variant", choices=sorted(VARIANT_ALIASES), default="gl")
    c.add_argument("--intercept", action="store_true")

    pa = _child(children, sub, "path", help="regularization path")
    add_io(pa)
    pa.add_argument("--grid-l1", dest="grid_l1", type=parse_grid, default=(-4.0, 3.0, 40),
                    help="penalty ladder lo:hi:n in log10, traversed downward")
    pa.add_argument("--mix", type=float, default=0.4,
                    help="ridge share of the penalty; 1.0 is the pure ridge ladder")
    pa.add_argument("--intercept", action="store_true")

    s = _child(children, sub, "simulate", help="write a synthetic dataset")
    add_io(s, obs=False, coords_required=True)
    s.add_argument("--pattern", choices=PATTERNS, default="block")
    s.add_argument("--n", type=int, default=10_000)
    s.add_argument("--zero-target", dest="zero_target", type=float, default=0.30)

    st = _child(children, sub, "study", help="replicated estimator comparison")
    add_io(st, obs=False, coords_required=True)
    st.add_argument("--patterns", default="block,smooth,hotspot,structured")
    st.add_argument("--n", type=int, default=10_000)
    st.add_argument("--zero-targets", dest="zero_targets", default="0.15")
    st.add_argument("--reps", type=int, default=1)
    st.add_argument("--folds", type=int, default=5)
    st.add_argument("--train-frac", dest="train_frac", type=float, default=0.60)

    su = _child(children, sub, "summarize", help="full replication pipeline")
    add_io(su)
    su.add_argument("--grid-l1", dest="grid_l1", type=parse_grid, default=(-5.0, 2.0, 10))
    su.add_argument("--grid-l2", dest="grid_l2", type=parse_grid, default=(-5.0, 5.0, 10))
    su.add_argument("--folds", type=int, default=5)
    su.add_argument("--reps", type=int, default=5)
    su.add_argument("--train-frac", dest="train_frac", type=float, default=0.60)
    su.add_argument("--variant", choices=sorted(VARIANT_ALIASES), default="gl")
    su.add_argument("--intercept", action="store_true")
    su.add_argument("--format", choices=("csv", "geojson"), default="csv")
    su.add_argument("--workers", type=int, default=1)

    return parser, children


def _child(children, sub, name, **kw):
    p = sub.add_parser(name, **kw)
    children.append(p)
    return p


def base_manifest(args, command):
    entries = {
        "command": command,
        "version": __version__,
        "seed": getattr(args, "seed", 0),
        "p": getattr(args, "p", 1.5),
        "approximate": getattr(args, "approx", False),
        "intercept_update": "after_each_md_step",
        "objective_values": "reported up to the dropped additive likelihood constant",
    }
    for key in ("obs", "edges", "blocks", "coords"):
        value = getattr(args, key, None)
        if value:
            entries[f"input_{key}"] = value
    return entries


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise ValueError(f"--{name.replace('_', '-')} is required for this command")


def cmd_fit(args):
    _require(args, "obs", "edges")
    data, g, _ = ingest(args.obs, args.edges, args.blocks, args.coords)
    w = laplacian(g, approximate=args.approx)
    cfg = PenaltyConfig(lambda1=args.l1, lambda2=args.l2,
                        fit_intercept=args.intercept, track_iterates=False)
    result = fit(data, w, cfg, args.p, variant=VARIANT_ALIASES[args.variant])
    out = Path(args.out_dir)
    (out / "fits").mkdir(parents=True, exist_ok=True)
    with open(out / "fits" / "effects.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "alpha"])
        for i, lab in enumerate(g.labels):
            writer.writerow([lab, f"{result.alpha[i]:.12g}"])
    entries = base_manifest(args, "fit")
    entries.update(
        variant=result.variant, lambda1=result.lambda1, lambda2=result.lambda2,
        iterations=result.iterations, converged=result.converged,
        objective_final=f"{result.objective_trace[-1]:.12g}",
        intercept="" if result.intercept is None else f"{result.intercept:.12g}",
    )
    write_manifest(out / "manifest.txt", entries)
    return 0


def cmd_cv(args):
    _require(args, "obs", "edges")
    data, g, _ = ingest(args.obs, args.edges, args.blocks, args.coords)
    w = laplacian(g, approximate=args.approx)
    variant = VARIANT_ALIASES[args.variant]
    if variant == "unpenalized":
        raise ValueError("the un-penalized variant has nothing to tune")
    grid = GridSpec(
        log_lambda1=args.grid_l1,
        log_lambda2=args.grid_l2 if variant == "gl" else None,
        folds=args.folds,
        seed=args.seed,
    )
    cfg = PenaltyConfig(fit_intercept=args.intercept, track_iterates=False)
    report = cross_validate(data, w, grid, cfg, args.p)
    out = Path(args.out_dir)
    (out / "cv").mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "cv" / "report.csv")
    entries = base_manifest(args, "cv")
    entries.update(
        variant=variant, folds=args.folds,
        chosen_lambda1=f"{report.chosen[0]:.12g}",
        chosen_lambda2=f"{report.chosen[1]:.12g}",
    )
    write_manifest(out / "manifest.txt", entries)
    return 0


def cmd_path(args):
    _require(args, "obs", "edges")
    data, g, _ = ingest(args.obs, args.edges, args.blocks, args.coords)
    w = laplacian(g, approximate=args.approx)
    lo, hi, count = args.grid_l1
    lambdas = 10.0 ** np.linspace(hi, lo, count)
    cfg = PenaltyConfig(fit_intercept=args.intercept, track_iterates=False)
    path = solution_path(data, w, lambdas, args.mix, cfg, args.p)
    out = Path(args.out_dir)
    (out / "path").mkdir(parents=True, exist_ok=True)
    with open(out / "path" / "path.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda"] + list(g.labels))
        for k, lam in enumerate(lambdas):
            writer.writerow([f"{lam:.12g}"] + [f"{v:.12g}" for v in path.alphas[k]])
    entries = base_manifest(args, "path")
    entries.update(mix=args.mix, ladder=f"{lo}:{hi}:{count}")
    write_manifest(out / "manifest.txt", entries)
    return 0


def cmd_simulate(args):
    _require(args, "edges", "coords")
    _, g, coords = _ingest_graph_only(args)
    spec = default_pattern(args.pattern, coords)
    zt = round(args.zero_target, 2)
    phi_range = PHI_RANGES.get((args.pattern, zt))
    calibrate = phi_range is None
    if calibrate:
        phi_range = PHI_RANGES[(args.pattern, 0.30)]
    sim = SimConfig(n=args.n, phi_range=phi_range, zero_target=args.zero_target,
                    p=args.p, seed=args.seed)
    data, alpha_true = simulate_dataset(spec, sim, g, calibrate=calibrate)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_observations(data, g, out / "obs.csv")
    with open(out / "truth.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "alpha_true"])
        for i, lab in enumerate(g.labels):
            writer.writerow([lab, f"{alpha_true[i]:.12g}"])
    entries = base_manifest(args, "simulate")
    entries.update(
        pattern=args.pattern, n=args.n, zero_target=args.zero_target,
        phi_range=f"{phi_range[0]}:{phi_range[1]}", calibrated=calibrate,
        realized_zero_fraction=f"{float(np.mean(data.y == 0)):.6g}",
    )
    write_manifest(out / "manifest.txt", entries)
    return 0


def _ingest_graph_only(args):
    # graph + coords without an observation table
    from .graph import build_graph, coords_array, read_block_file, read_coord_file, read_edge_list

    edges = read_edge_list(args.edges)
    blocks = read_block_file(args.blocks) if args.blocks else None
    coords = read_coord_file(args.coords)
    universe = {a for e in edges for a in e} | set(coords)
    if blocks:
        universe |= set(blocks)
    g = build_graph(edges, universe, block_of=blocks)
    return None, g, coords_array(g, coords)


def cmd_study(args):
    _require(args, "edges", "coords")
    _, g, coords = _ingest_graph_only(args)
    patterns = [x.strip() for x in args.patterns.split(",") if x.strip()]
    zero_targets = [float(x) for x in args.zero_targets.split(",") if x.strip()]
    rows = comparison_study(
        g, coords, patterns=patterns, n_values=(args.n,), zero_targets=zero_targets,
        n_replications=args.reps, p=args.p, train_frac=args.train_frac,
        folds=args.folds, seed=args.seed, approximate=args.approx,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_study_csv(rows, out / "study.csv")
    entries = base_manifest(args, "study")
    entries.update(patterns=",".join(patterns), n=args.n,
                   zero_targets=args.zero_targets, reps=args.reps)
    write_manifest(out / "manifest.txt", entries)
    return 0


def cmd_summarize(args):
    _require(args, "obs", "edges")
    data, g, coords = ingest(args.obs, args.edges, args.blocks, args.coords)
    run = RunConfig(
        p=args.p, grid_l1=args.grid_l1, grid_l2=args.grid_l2, folds=args.folds,
        reps=args.reps, train_frac=args.train_frac, seed=args.seed,
        variant=VARIANT_ALIASES[args.variant], approximate=args.approx,
        fit_intercept=args.intercept, workers=args.workers,
    )
    results, reports, metrics, summaries = replicate(data, g, run)

    out = Path(args.out_dir)
    for sub in ("fits", "cv", "summaries"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for rep, result in enumerate(results):
        with open(out / "fits" / f"rep_{rep:04d}_effects.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "alpha"])
            for i, lab in enumerate(g.labels):
                writer.writerow([lab, f"{result.alpha[i]:.12g}"])
    for rep, report in enumerate(reports):
        if report is not None:
            report.write_csv(out / "cv" / f"rep_{rep:04d}_cv.csv")

    export_summaries(summaries, out / "summaries" / "summary.csv", fmt="csv")
    if args.format == "geojson":
        if coords is None:
            raise ValueError("geojson output requires --coords")
        export_summaries(summaries, out / "summaries" / "summary.geojson",
                         fmt="geojson", coords=coords, graph=g)
    with open(out / "summaries" / "losses.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "observed_loss", "predicted_loss"])
        for s in summaries:
            writer.writerow([s.label, f"{s.observed_loss:.12g}", f"{s.predicted_loss:.12g}"])
    with open(out / "summaries" / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        keys = list(metrics[0])
        writer = csv.writer(fh)
        writer.writerow(keys)
        for row in metrics:
            writer.writerow(
                [f"{row[k]:.12g}" if isinstance(row[k], float) else row[k] for k in keys]
            )
    entries = base_manifest(args, "summarize")
    entries.update(
        variant=run.variant, reps=run.reps, folds=run.folds,
        train_frac=run.train_frac, format=args.format,
        grid_l1="{}:{}:{}".format(*args.grid_l1),
        grid_l2="none" if args.grid_l2 is None else "{}:{}:{}".format(*args.grid_l2),
        seed_scheme="SeedSequence(master, spawn_key=(rep,)) -> (split, folds)",
    )
    write_manifest(out / "manifest.txt", entries)
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "cv": cmd_cv,
    "path": cmd_path,
    "simulate": cmd_simulate,
    "study": cmd_study,
    "summarize": cmd_summarize,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser, children = build_parser()
    try:
        if known.config:
            defaults = read_config(known.config)
            for child in children:
                child.set_defaults(**defaults)
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except (NumericRangeError, SolverError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
