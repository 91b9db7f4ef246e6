"""File ingestion, the replication pipeline, and summary exports.

The replication workflow mirrors the intended production use: split the
data into training and validation subsets with stratification at the
location level, tune the penalties by cross-validation on the training
side, fit, and score out-of-sample. Replicating the procedure yields
per-location means, standard deviations and empirical 95% intervals,
which drive the A/B/C sign categorization (interval contains zero, lies
below it, lies above it).

All randomness flows from a single master seed: replication r uses
``SeedSequence(master, spawn_key=(r,))`` split into one stream for the
train/validation draw and one for fold assignment. Replications are
independent and may run in parallel; outputs are written in replication
order by the single caller thread.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .graph import (
    build_graph,
    coords_array,
    laplacian,
    read_block_file,
    read_coord_file,
    read_edge_list,
)
from .optimizer import ObservationTable, PenaltyConfig, fit
from .simlab import stratified_split
from .tuning import GridSpec, cross_validate, predictive_deviance
from .tweedie import NumericRangeError

log = logging.getLogger(__name__)

OBS_HEADER = ["location_label", "y", "lp_mean", "phi", "weight"]
SUMMARY_HEADER = ["label", "mean", "sd", "q025", "q975", "category"]


@dataclass(frozen=True)
class RunConfig:
    """Replication-workflow settings shared by the CLI subcommands."""

    p: float = 1.5
    grid_l1: tuple = (-5.0, 2.0, 10)
    grid_l2: tuple | None = (-5.0, 5.0, 10)
    folds: int = 5
    reps: int = 1
    train_frac: float = 0.60
    seed: int = 0
    variant: str = "gl"
    approximate: bool = False
    fit_intercept: bool = False
    workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.train_frac < 1.0:
            raise ValueError("train fraction must lie in (0, 1)")
        if self.reps < 1:
            raise ValueError("replication count must be at least 1")
        if self.variant not in ("gl", "ridge", "unpenalized"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.workers < 1:
            raise ValueError("worker count must be at least 1")


@dataclass(frozen=True)
class LocationSummary:
    """Across-replication summary of one location's estimated effect."""

    label: str
    mean: float
    sd: float
    q025: float
    q975: float
    category: str  # A: interval contains 0, B: below, C: above
    observed_loss: float
    predicted_loss: float


def ingest(obs_path, edges_path, blocks_path=None, coords_path=None):
    """Read observations plus graph files into validated structures.

    The vertex universe is the union of edge endpoints and any labels in
    the block and coordinate files (which is how isolated vertices are
    declared). Every observation must reference a vertex in the
    universe; vertices without observations are allowed.
    """
    edges = read_edge_list(edges_path)
    blocks = read_block_file(blocks_path) if blocks_path else None
    coords = read_coord_file(coords_path) if coords_path else None
    universe = {a for e in edges for a in e}
    if blocks:
        universe |= set(blocks)
    if coords:
        universe |= set(coords)
    g = build_graph(edges, universe, block_of=blocks)

    loc, ys, lps, phis, wts = [], [], [], [], []
    with open(obs_path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != OBS_HEADER:
            raise ValueError(
                f"{obs_path}: expected header {','.join(OBS_HEADER)}"
            )
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ValueError(f"{obs_path}:{ln}: expected 5 columns, got {len(row)}")
            label = row[0].strip()
            try:
                y, lp, phi, wt = (float(v) for v in row[1:])
            except ValueError:
                raise ValueError(f"{obs_path}:{ln}: non-numeric value in {row!r}") from None
            try:
                idx = g.index(label)
            except ValueError:
                raise ValueError(
                    f"{obs_path}:{ln}: location {label!r} not in the vertex universe"
                ) from None
            if y < 0:
                raise ValueError(f"{obs_path}:{ln}: negative response {y}")
            if phi <= 0:
                raise ValueError(f"{obs_path}:{ln}: non-positive dispersion {phi}")
            if wt <= 0:
                raise ValueError(f"{obs_path}:{ln}: non-positive weight {wt}")
            loc.append(idx)
            ys.append(y)
            lps.append(lp)
            phis.append(phi)
            wts.append(wt)

    data = ObservationTable(
        location=np.array(loc, dtype=np.intp),
        y=np.array(ys),
        lp_mean=np.array(lps),
        phi=np.array(phis),
        weight=np.array(wts),
        n_locations=g.n_vertices,
    )
    counts = data.location_counts()
    log.info(
        "ingested %d observations over %d locations (%d observed)",
        len(data), g.n_vertices, int(np.sum(counts > 0)),
    )
    coord_arr = coords_array(g, coords) if coords else None
    return data, g, coord_arr


def predict(data, fit_result):
    """Per-observation predicted loss: exp(offset + intercept + effect)."""
    intercept = fit_result.intercept if fit_result.intercept is not None else 0.0
    lp = data.lp_mean + intercept + fit_result.alpha[data.location]
    if lp.size and lp.max() > 700.0:
        raise NumericRangeError("predicted log-mean exceeds the floating-point range")
    return np.exp(lp)


def aggregated_mse(data, yhat):
    """Mean squared exposure-weighted residual, aggregated per location."""
    resid = np.bincount(
        data.location, weights=data.weight * (data.y - yhat), minlength=data.n_locations
    )
    return float(np.sum(resid**2) / data.n_locations)


def aggregated_losses(data, yhat):
    """Per-location exposure-weighted observed and predicted totals."""
    obs = np.bincount(data.location, weights=data.weight * data.y, minlength=data.n_locations)
    pred = np.bincount(data.location, weights=data.weight * yhat, minlength=data.n_locations)
    return obs, pred


def percent_improvement(baseline, adjusted):
    """100 * (baseline - adjusted) / baseline."""
    if baseline == 0.0:
        raise ValueError("baseline metric is zero; improvement undefined")
    return 100.0 * (baseline - adjusted) / baseline


def categorize(q025, q975):
    if q025 > 0.0:
        return "C"
    if q975 < 0.0:
        return "B"
    return "A"


def _replication_seeds(master, rep):
    child = np.random.SeedSequence(entropy=master, spawn_key=(rep,))
    split_ss, cv_ss = child.spawn(2)
    return int(split_ss.generate_state(1)[0]), int(cv_ss.generate_state(1)[0])


def run_replication(data, w, run, rep):
    """One replication: split, tune, fit, score out-of-sample."""
    split_seed, cv_seed = _replication_seeds(run.seed, rep)
    mask = stratified_split(data, run.train_frac, split_seed)
    train, valid = data.subset(mask), data.subset(~mask)

    cfg = PenaltyConfig(fit_intercept=run.fit_intercept, track_iterates=False)
    report = None
    if run.variant != "unpenalized":
        grid = GridSpec(
            log_lambda1=run.grid_l1,
            log_lambda2=run.grid_l2 if run.variant == "gl" else None,
            folds=run.folds,
            seed=cv_seed,
        )
        report = cross_validate(train, w, grid, cfg, run.p)
        cfg = replace(cfg, lambda1=report.chosen[0], lambda2=report.chosen[1])
    result = fit(train, w, cfg, run.p, variant=run.variant)

    yhat = predict(valid, result)
    baseline = np.exp(valid.lp_mean)
    intercept = result.intercept if result.intercept is not None else 0.0
    obs_loss, pred_loss = aggregated_losses(valid, yhat)
    metrics = {
        "rep": rep,
        "lambda1": result.lambda1,
        "lambda2": result.lambda2,
        "iterations": result.iterations,
        "converged": bool(result.converged),
        "valid_deviance": predictive_deviance(valid, result.alpha, intercept, run.p),
        "valid_deviance_baseline": predictive_deviance(
            valid, np.zeros(data.n_locations), 0.0, run.p
        ),
        "valid_mse": aggregated_mse(valid, yhat),
        "valid_mse_baseline": aggregated_mse(valid, baseline),
    }
    metrics["deviance_improvement_pct"] = percent_improvement(
        metrics["valid_deviance_baseline"], metrics["valid_deviance"]
    )
    metrics["mse_improvement_pct"] = percent_improvement(
        metrics["valid_mse_baseline"], metrics["valid_mse"]
    )
    return result, report, metrics, obs_loss, pred_loss


def _replication_worker(args):
    data, w, run, rep = args
    return run_replication(data, w, run, rep)


def replicate(data, g, run):
    """Run all replications and summarize per-location estimates.

    Returns (fit results, cv reports, metric rows, summaries). Summaries
    use empirical 2.5/97.5 percentiles with linear interpolation across
    replication estimates.
    """
    w = laplacian(g, approximate=run.approximate)
    small = np.flatnonzero(data.location_counts() < 2)
    if len(small):
        log.info(
            "%d locations have fewer than 2 observations and stay in training",
            len(small),
        )
    jobs = [(data, w, run, rep) for rep in range(run.reps)]
    if run.workers > 1:
        with ProcessPoolExecutor(max_workers=run.workers) as pool:
            outcomes = list(pool.map(_replication_worker, jobs))
    else:
        outcomes = [_replication_worker(job) for job in jobs]

    results = [o[0] for o in outcomes]
    reports = [o[1] for o in outcomes]
    metrics = [o[2] for o in outcomes]
    estimates = np.vstack([r.alpha for r in results])
    obs_losses = np.vstack([o[3] for o in outcomes])
    pred_losses = np.vstack([o[4] for o in outcomes])

    summaries = summarize_estimates(g, estimates, obs_losses, pred_losses)
    return results, reports, metrics, summaries


def summarize_estimates(g, estimates, obs_losses=None, pred_losses=None):
    """Fold replication estimates into per-location summaries."""
    reps, n = estimates.shape
    if n != g.n_vertices:
        raise ValueError("estimate matrix does not match the graph")
    mean = estimates.mean(axis=0)
    sd = estimates.std(axis=0, ddof=1) if reps > 1 else np.zeros(n)
    q025 = np.percentile(estimates, 2.5, axis=0)
    q975 = np.percentile(estimates, 97.5, axis=0)
    obs = obs_losses.mean(axis=0) if obs_losses is not None else np.zeros(n)
    pred = pred_losses.mean(axis=0) if pred_losses is not None else np.zeros(n)
    return [
        LocationSummary(
            label=g.labels[i],
            mean=float(mean[i]),
            sd=float(sd[i]),
            q025=float(q025[i]),
            q975=float(q975[i]),
            category=categorize(q025[i], q975[i]),
            observed_loss=float(obs[i]),
            predicted_loss=float(pred[i]),
        )
        for i in range(n)
    ]


def export_summaries(summaries, path, fmt="csv", coords=None, graph=None):
    """Write summaries as CSV (fixed columns) or GeoJSON points."""
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(SUMMARY_HEADER)
            for s in summaries:
                writer.writerow(
                    [s.label, f"{s.mean:.12g}", f"{s.sd:.12g}",
                     f"{s.q025:.12g}", f"{s.q975:.12g}", s.category]
                )
        return
    if fmt == "geojson":
        if coords is None or graph is None:
            raise ValueError("geojson export requires vertex coordinates")
        features = []
        for s in summaries:
            lon, lat = coords[graph.index(s.label)]
            features.append(
                {
                    "type": "Feature",
                    "geometry": {"type": "Point", "coordinates": [lon, lat]},
                    "properties": {
                        "label": s.label, "mean": s.mean, "sd": s.sd,
                        "q025": s.q025, "q975": s.q975, "category": s.category,
                    },
                }
            )
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"type": "FeatureCollection", "features": features}, fh,
                      sort_keys=True, separators=(",", ":"))
        return
    raise ValueError(f"unknown export format {fmt!r}")


def read_summary_csv(path):
    """Round-trip reader for exported summary tables."""
    out = []
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != SUMMARY_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in reader:
            out.append(
                LocationSummary(
                    label=row[0], mean=float(row[1]), sd=float(row[2]),
                    q025=float(row[3]), q975=float(row[4]), category=row[5],
                    observed_loss=0.0, predicted_loss=0.0,
                )
            )
    return out


def write_observations(data, g, path):
    """Observation CSV in the ingest schema."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(OBS_HEADER)
        for k in range(len(data)):
            writer.writerow(
                [
                    g.labels[data.location[k]],
                    f"{data.y[k]:.12g}",
                    f"{data.lp_mean[k]:.12g}",
                    f"{data.phi[k]:.12g}",
                    f"{data.weight[k]:.12g}",
                ]
            )


def write_manifest(path, entries):
    """Plain-text run manifest: sorted 'key = value' lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(entries):
            fh.write(f"{key} = {entries[key]}\n")
