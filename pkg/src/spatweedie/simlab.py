"""Simulation laboratory: spatial effect patterns, data generation, metrics.

Supports four canonical effect surfaces over an areal graph with vertex
coordinates: piecewise-constant blocks by longitude region, a smooth
staircase over finer regions, exponential-decay hot-spots, and a draw
from a distance-structured Gaussian process. Responses are simulated
from the compound Poisson-gamma family on top of a per-observation base
log-mean, with the dispersion range controlling the share of exact zeros.

The emitted observation tables carry the base (effect-free) log-mean as
the offset column, so an estimator sees exactly what a fitted double GLM
would hand it and must recover the injected effects.

Replications are independent given their seeds; metric reducers are
plain sums over fixed vertex order, so results do not depend on
evaluation schedule.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import Delaunay

from .graph import build_graph, coords_array, laplacian
from .optimizer import ObservationTable, PenaltyConfig, fit
from .tuning import GridSpec, cross_validate, predictive_deviance
from .tweedie import sample_cp, theta_to_mean

PATTERNS = ("block", "smooth", "hotspot", "structured")

# Uniform dispersion reference ranges that hit the four standard
# zero-proportion targets on a single-state fixture.
PHI_RANGES = {
    ("block", 0.15): (7.0, 12.0),
    ("block", 0.30): (12.0, 30.0),
    ("block", 0.60): (30.0, 140.0),
    ("block", 0.80): (140.0, 400.0),
    ("smooth", 0.15): (7.0, 11.0),
    ("smooth", 0.30): (11.0, 24.0),
    ("smooth", 0.60): (24.0, 100.0),
    ("smooth", 0.80): (100.0, 200.0),
    ("hotspot", 0.15): (25.0, 40.0),
    ("hotspot", 0.30): (40.0, 70.0),
    ("hotspot", 0.60): (70.0, 200.0),
    ("hotspot", 0.80): (200.0, 500.0),
    ("structured", 0.15): (5.0, 7.0),
    ("structured", 0.30): (6.0, 14.0),
    ("structured", 0.60): (16.0, 35.0),
    ("structured", 0.80): (40.0, 80.0),
}

# Log10 tuning grids per pattern: (lambda1 axis, lambda2 axis).
DEFAULT_GRIDS = {
    "block": ((-5.0, 0.0, 10), (-3.0, 2.0, 10)),
    "smooth": ((-5.0, 2.0, 10), (-5.0, 5.0, 10)),
    "hotspot": ((-5.0, 2.0, 10), (-5.0, 5.0, 10)),
    "structured": ((-5.0, 2.0, 10), (-5.0, 5.0, 10)),
}


@dataclass(frozen=True)
class PatternSpec:
    """One spatial effect surface over a coordinate set."""

    kind: str
    coords: np.ndarray  # (L, 2) lon/lat
    n_regions: int = 4
    levels: tuple = (-3.0, -1.0, 1.0, 3.0)
    value_range: tuple = (-3.0, 3.0)
    hotspots: tuple = ()
    peak: float = 3.0
    kernel_decay: float = 3.0
    sigma2: float = 1.0
    cov_decay: float = 1.0

    def __post_init__(self):
        if self.kind not in PATTERNS:
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise ValueError("coords must be an (L, 2) array")
        if self.kernel_decay <= 0 or self.sigma2 <= 0 or self.cov_decay <= 0:
            raise ValueError("decay and variance parameters must be positive")


def default_pattern(kind, coords):
    """Pattern with the canonical parameter choices for each kind."""
    coords = np.asarray(coords, dtype=float)
    if kind == "block":
        return PatternSpec(kind="block", coords=coords, n_regions=4)
    if kind == "smooth":
        return PatternSpec(kind="smooth", coords=coords, n_regions=10)
    if kind == "hotspot":
        # two hot-spots in opposite corners of the map
        score = coords[:, 0] + coords[:, 1]
        return PatternSpec(
            kind="hotspot", coords=coords,
            hotspots=(int(np.argmin(score)), int(np.argmax(score))),
        )
    if kind == "structured":
        return PatternSpec(kind="structured", coords=coords)
    raise ValueError(f"unknown pattern kind {kind!r}")


@dataclass(frozen=True)
class SimConfig:
    """Sampling settings for one simulated dataset."""

    n: int
    phi_range: tuple
    zero_target: float | None = None
    theta_mean: float = -0.16
    theta_sd: float = 0.02
    p: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        lo, hi = self.phi_range
        if lo <= 0 or hi < lo:
            raise ValueError("phi_range must be positive and ordered")
        if self.zero_target is not None and not 0.0 < self.zero_target < 1.0:
            raise ValueError("zero_target must lie in (0, 1)")
        if self.theta_mean >= 0 or self.theta_sd <= 0:
            raise ValueError("canonical parameter distribution must sit below zero")


def _longitude_regions(lon, k):
    if len(np.unique(lon)) < k:
        raise ValueError(f"need at least {k} distinct longitudes for {k} regions")
    edges = np.quantile(lon, np.arange(1, k) / k)
    return np.searchsorted(edges, lon, side="right")


def generate_pattern(spec, seed=0):
    """True effect vector for one pattern; deterministic given seed."""
    coords = spec.coords
    if spec.kind == "block":
        if len(spec.levels) != spec.n_regions:
            raise ValueError("block pattern needs one level per region")
        region = _longitude_regions(coords[:, 0], spec.n_regions)
        return np.asarray(spec.levels, dtype=float)[region]
    if spec.kind == "smooth":
        region = _longitude_regions(coords[:, 0], spec.n_regions)
        lo, hi = spec.value_range
        levels = np.linspace(lo, hi, spec.n_regions)
        return levels[region]
    if spec.kind == "hotspot":
        if len(spec.hotspots) == 0:
            raise ValueError("hotspot pattern needs at least one hotspot vertex")
        out = np.full(len(coords), -np.inf)
        for h in spec.hotspots:
            dist = np.linalg.norm(coords - coords[int(h)], axis=1)
            out = np.maximum(out, spec.peak * np.exp(-spec.kernel_decay * dist))
        return out
    # structured: one draw from a distance-structured Gaussian field
    rng = np.random.default_rng(seed)
    dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=2)
    cov = spec.sigma2 * np.exp(-spec.cov_decay * dist)
    chol = np.linalg.cholesky(cov + 1e-10 * np.eye(len(coords)))
    return chol @ rng.standard_normal(len(coords))


def expected_zero_fraction(mu, phi, p):
    """Mean Poisson zero mass exp(-xi) over the given mean/dispersion pairs."""
    xi = mu ** (2.0 - p) / (phi * (2.0 - p))
    return float(np.mean(np.exp(-xi)))


def calibrate_dispersion(mu, phi, p, target, tol=1e-5):
    """Multiplier for the dispersion column hitting a zero-share target.

    The expected zero fraction is increasing in the multiplier, so plain
    bisection on its logarithm suffices.
    """
    lo, hi = -6.0, 6.0
    if not expected_zero_fraction(mu, phi * 10.0**lo, p) < target < expected_zero_fraction(
        mu, phi * 10.0**hi, p
    ):
        raise ValueError(f"zero target {target} unreachable by dispersion scaling")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if expected_zero_fraction(mu, phi * 10.0**mid, p) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 10.0 ** (0.5 * (lo + hi))


def simulate_dataset(spec, sim, g, allocation=None, calibrate=False):
    """Simulate an offset table whose spatial signal is the pattern.

    Per observation: a canonical-parameter draw sets the base log-mean,
    the true mean multiplies in the location effect, dispersion is drawn
    uniformly from ``sim.phi_range`` (rescaled to ``sim.zero_target``
    when ``calibrate``), and the response comes from the exact mixture
    sampler. The table's offset column holds the base predictor only.
    """
    L = g.n_vertices
    if sim.n < L:
        raise ValueError("need at least one observation per location on average")
    if len(spec.coords) != L:
        raise ValueError("pattern coordinates do not match the graph")
    alpha_true = generate_pattern(spec, seed=sim.seed)
    rng = np.random.default_rng(sim.seed)
    if allocation is None:
        counts = rng.multinomial(sim.n, np.full(L, 1.0 / L))
    else:
        counts = np.asarray(allocation, dtype=int)
        if counts.sum() != sim.n or len(counts) != L:
            raise ValueError("allocation must give per-location counts summing to n")
    loc = np.repeat(np.arange(L), counts)
    theta = rng.normal(sim.theta_mean, sim.theta_sd, size=sim.n)
    if np.any(theta >= 0):
        raise ValueError("canonical parameter draw crossed zero; lower theta_mean")
    lp_base = np.log(theta_to_mean(theta, sim.p))
    mu_true = np.exp(lp_base + alpha_true[loc])
    phi = rng.uniform(sim.phi_range[0], sim.phi_range[1], size=sim.n)
    if calibrate:
        if sim.zero_target is None:
            raise ValueError("calibration requires a zero_target")
        phi = phi * calibrate_dispersion(mu_true, phi, sim.p, sim.zero_target)
    y, _ = sample_cp(mu_true, phi, sim.p, rng)
    table = ObservationTable(
        location=loc, y=y, lp_mean=lp_base, phi=phi,
        weight=np.ones(sim.n), n_locations=L,
    )
    return table, alpha_true


def sse(alpha_true, alpha_hat):
    """Squared Euclidean estimation error."""
    alpha_true = np.asarray(alpha_true, dtype=float)
    alpha_hat = np.asarray(alpha_hat, dtype=float)
    if alpha_true.shape != alpha_hat.shape:
        raise ValueError("effect vectors must have equal length")
    diff = alpha_true - alpha_hat
    return float(diff @ diff)


def deviance_ratio(data, alpha_true, alpha_hat, p, intercept_true=0.0, intercept_hat=0.0):
    """Predictive deviance at the estimate over deviance at the truth.

    Values close to one are desirable; the ratio is exactly one at the
    true effects.
    """
    num = predictive_deviance(data, alpha_hat, intercept_hat, p)
    den = predictive_deviance(data, alpha_true, intercept_true, p)
    assert den > 0.0, "deviance denominator must be positive"
    return num / den


# ---------------------------------------------------------------------------
# Synthetic areal fixtures.
# ---------------------------------------------------------------------------


def _delaunay_edges(points, labels):
    tri = Delaunay(points)
    edges = set()
    for simplex in tri.simplices:
        for a in range(3):
            for b in range(a + 1, 3):
                i, j = sorted((simplex[a], simplex[b]))
                edges.add((labels[i], labels[j]))
    return sorted(edges)


def synthetic_areal_graph(n_vertices=282, seed=0, bbox=(-73.7, -71.8, 41.0, 42.1)):
    """State-like areal fixture: random sites with Delaunay adjacency.

    Returns the graph and its (L, 2) coordinate array. Average degree is
    close to six, matching first-order zipcode adjacency in density.
    """
    rng = np.random.default_rng(seed)
    labels = [f"Z{i:04d}" for i in range(n_vertices)]
    lon = rng.uniform(bbox[0], bbox[1], n_vertices)
    lat = rng.uniform(bbox[2], bbox[3], n_vertices)
    points = np.column_stack([lon, lat])
    g = build_graph(_delaunay_edges(points, labels), labels)
    return g, coords_array(g, dict(zip(labels, points)))


def synthetic_multistate_graph(block_sizes=(282, 537, 77), seed=0, band_width=1.5):
    """Adjacent state-like bands triangulated together.

    Cross-band edges exist (they are what the block approximation
    removes); block membership is the band. Returns graph and coordinates.
    """
    rng = np.random.default_rng(seed)
    labels, block_of, pts = [], {}, []
    for k, size in enumerate(block_sizes):
        lo = k * band_width
        for i in range(size):
            lab = f"S{k}Z{i:04d}"
            labels.append(lab)
            block_of[lab] = f"S{k}"
            pts.append((rng.uniform(lo, lo + band_width), rng.uniform(41.0, 42.5)))
    points = np.array(pts)
    g = build_graph(_delaunay_edges(points, labels), labels, block_of=block_of)
    return g, coords_array(g, dict(zip(labels, points)))


# ---------------------------------------------------------------------------
# Study drivers.
# ---------------------------------------------------------------------------


def stratified_split(data, frac, seed):
    """Per-location train/holdout split; tiny locations go wholly to train.

    Locations with fewer than two rows cannot be stratified and are
    assigned entirely to the training side.
    """
    if not 0.0 < frac < 1.0:
        raise ValueError("train fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_mask = np.zeros(len(data), dtype=bool)
    for i in range(data.n_locations):
        idx = np.flatnonzero(data.location == i)
        if len(idx) < 2:
            train_mask[idx] = True
            continue
        rng.shuffle(idx)
        k = int(np.clip(round(frac * len(idx)), 1, len(idx) - 1))
        train_mask[idx[:k]] = True
    return train_mask


def _variant_grid(pattern, variant, folds, seed):
    l1, l2 = DEFAULT_GRIDS[pattern]
    if variant == "gl":
        return GridSpec(log_lambda1=l1, log_lambda2=l2, folds=folds, seed=seed)
    if variant == "ridge":
        return GridSpec(log_lambda1=l1, log_lambda2=None, folds=folds, seed=seed)
    return None  # unpenalized needs no tuning


def evaluate_variant(train, valid, w, alpha_true, variant, pattern, p, cfg,
                     folds=5, seed=0, grid=None):
    """Tune (if applicable), fit on train, and score one estimator."""
    t0 = time.perf_counter()
    if variant != "unpenalized":
        if grid is None:
            grid = _variant_grid(pattern, variant, folds, seed)
        else:
            grid = replace(grid, seed=seed)
        report = cross_validate(train, w, grid, cfg, p)
        lam1, lam2 = report.chosen
        cfg = replace(cfg, lambda1=lam1, lambda2=lam2)
    res = fit(train, w, cfg, p, variant=variant)
    intercept = res.intercept if res.intercept is not None else 0.0
    row = {
        "variant": variant,
        "sse": sse(alpha_true, res.alpha),
        "train_dr": deviance_ratio(train, alpha_true, res.alpha, p, intercept_hat=intercept),
        "valid_dr": deviance_ratio(valid, alpha_true, res.alpha, p, intercept_hat=intercept),
        "valid_deviance": predictive_deviance(valid, res.alpha, intercept, p),
        "lambda1": res.lambda1,
        "lambda2": res.lambda2,
        "wall_time_s": time.perf_counter() - t0,
    }
    return row, res


def comparison_study(g, coords, patterns, n_values, zero_targets, n_replications,
                     p=1.5, cfg=None, train_frac=0.6, folds=5, seed=0,
                     variants=("gl", "ridge", "unpenalized"), approximate=False,
                     calibrate=False):
    """Replicated estimator comparison over patterns and sampling settings.

    One row per (pattern, n, zero target, variant, replication) with the
    estimation error, training and validation deviance ratios, and wall
    time.
    """
    cfg = cfg or PenaltyConfig()
    w = laplacian(g, approximate=approximate)
    rows = []
    root = np.random.SeedSequence(seed)
    for pattern in patterns:
        spec = default_pattern(pattern, coords)
        for zt in zero_targets:
            phi_range = PHI_RANGES.get((pattern, zt))
            use_calibration = calibrate or phi_range is None
            if phi_range is None:
                phi_range = PHI_RANGES[(pattern, 0.30)]
            for n in n_values:
                for rep in range(n_replications):
                    child = np.random.SeedSequence(
                        entropy=root.entropy,
                        spawn_key=(PATTERNS.index(pattern), int(n), int(zt * 1000), rep),
                    )
                    sim_seed, split_seed, cv_seed = (
                        int(s.generate_state(1)[0]) for s in child.spawn(3)
                    )
                    sim = SimConfig(n=n, phi_range=phi_range, zero_target=zt,
                                    p=p, seed=sim_seed)
                    data, alpha_true = simulate_dataset(
                        spec, sim, g, calibrate=use_calibration
                    )
                    mask = stratified_split(data, train_frac, split_seed)
                    train, valid = data.subset(mask), data.subset(~mask)
                    for variant in variants:
                        row, _ = evaluate_variant(
                            train, valid, w, alpha_true, variant, pattern, p, cfg,
                            folds=folds, seed=cv_seed,
                        )
                        row.update(
                            pattern=pattern, n=n, zero_target=zt, seed=rep,
                            zero_fraction=float(np.mean(data.y == 0)),
                        )
                        rows.append(row)
    return rows


def sensitivity_study(g, coords, true_p_values, fit_p=1.5, patterns=PATTERNS,
                      n_values=(10_000,), n_seeds=10, zero_target=0.30,
                      cfg=None, train_frac=0.6, folds=5, seed=0, grid=None):
    """Estimate at a fixed index parameter on data generated at other ones.

    The dispersion draw is recalibrated per setting so every dataset
    keeps the same share of exact zeros. Reports the estimation error
    and the norms of the estimated and true effect vectors.
    """
    cfg = cfg or PenaltyConfig()
    w = laplacian(g)
    rows = []
    for pattern in patterns:
        spec = default_pattern(pattern, coords)
        base_range = PHI_RANGES[(pattern, zero_target)]
        for n in n_values:
            for true_p in true_p_values:
                for rep in range(n_seeds):
                    child = np.random.SeedSequence(
                        entropy=seed,
                        spawn_key=(PATTERNS.index(pattern), int(n), int(true_p * 100), rep),
                    )
                    sim_seed, split_seed, cv_seed = (
                        int(s.generate_state(1)[0]) for s in child.spawn(3)
                    )
                    sim = SimConfig(n=n, phi_range=base_range, zero_target=zero_target,
                                    p=true_p, seed=sim_seed)
                    data, alpha_true = simulate_dataset(spec, sim, g, calibrate=True)
                    mask = stratified_split(data, train_frac, split_seed)
                    train, valid = data.subset(mask), data.subset(~mask)
                    row, res = evaluate_variant(
                        train, valid, w, alpha_true, "gl", pattern, fit_p, cfg,
                        folds=folds, seed=cv_seed, grid=grid,
                    )
                    rows.append(
                        {
                            "pattern": pattern, "n": n, "true_p": true_p,
                            "fit_p": fit_p, "seed": rep, "sse": row["sse"],
                            "norm_hat": float(np.linalg.norm(res.alpha)),
                            "norm_true": float(np.linalg.norm(alpha_true)),
                            "zero_fraction": float(np.mean(data.y == 0)),
                        }
                    )
    return rows


def write_study_csv(rows, path, columns=("pattern", "n", "zero_target", "variant",
                                         "seed", "sse", "train_dr", "valid_dr",
                                         "wall_time_s")):
    """Study report with one row per replication."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            out = []
            for col in columns:
                v = row[col]
                out.append(f"{v:.12g}" if isinstance(v, float) else v)
            writer.writerow(out)
