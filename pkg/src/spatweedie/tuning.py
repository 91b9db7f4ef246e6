"""Cross-validated penalty selection and regularization-path tracing.

Penalty grids live on a base-10 logarithmic scale. Grids are traversed
from the largest to the smallest penalties, warm-starting each fit from
its neighbour along the ridge-weight axis, which keeps the whole sweep
cheap. Fold assignment is stratified within location so every location
appears in the training folds as often as its data allows.

Grid points within a fold are chained by warm starts and therefore run
sequentially; distinct folds only share read-only data and can be
evaluated concurrently by the caller.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .optimizer import _ell, _fit_stats, _location_stats, _LocStats
from .tweedie import loglik_kernel


@dataclass(frozen=True)
class GridSpec:
    """Log10 penalty grid plus fold settings.

    ``log_lambda2 = None`` pins the smoothing weight to zero, which turns
    the grid into the pure ridge line search.
    """

    log_lambda1: tuple  # (lo, hi, count)
    log_lambda2: tuple | None  # (lo, hi, count) or None for lambda2 = 0
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        for axis in (self.log_lambda1, self.log_lambda2):
            if axis is None:
                continue
            lo, hi, count = axis
            if lo > hi:
                raise ValueError(f"grid range [{lo}, {hi}] is inverted")
            if count < 1:
                raise ValueError("grid axes need at least one point")
            if count == 1 and lo != hi:
                raise ValueError("a single-point axis must have lo == hi")
        if self.folds < 2:
            raise ValueError("cross-validation needs at least two folds")

    def lambda1_values(self):
        lo, hi, count = self.log_lambda1
        return 10.0 ** np.linspace(hi, lo, int(count))  # descending

    def lambda2_values(self):
        if self.log_lambda2 is None:
            return np.array([0.0])
        lo, hi, count = self.log_lambda2
        return 10.0 ** np.linspace(hi, lo, int(count))  # descending


@dataclass
class CvReport:
    """Holdout deviances over the grid and the selected penalty pair."""

    log_lambda1: np.ndarray
    log_lambda2: np.ndarray  # -inf encodes the pinned lambda2 = 0 axis
    mean_deviance: np.ndarray
    sd_deviance: np.ndarray
    chosen: tuple  # (lambda1, lambda2) in natural scale
    chosen_idx: int  # flat index of the chosen grid point
    folds: int
    alphas: dict | None = None  # (i1, i2, fold) -> warm-start path entry

    def write_csv(self, path):
        ci = self.chosen_idx
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["log_lambda1", "log_lambda2", "mean_holdout_deviance",
                 "sd_holdout_deviance", "chosen"]
            )
            for k in range(len(self.log_lambda1)):
                writer.writerow(
                    [
                        f"{self.log_lambda1[k]:.12g}",
                        f"{self.log_lambda2[k]:.12g}",
                        f"{self.mean_deviance[k]:.12g}",
                        f"{self.sd_deviance[k]:.12g}",
                        int(k == ci),
                    ]
                )


@dataclass
class SolutionPath:
    """Warm-started estimates down a mixed-penalty ladder."""

    lambdas: np.ndarray
    mix: float
    alphas: np.ndarray  # (len(lambdas), L)
    intercepts: np.ndarray | None


def predictive_deviance(data, alpha, intercept, p):
    """Total deviance of the data at the given effects, up to y-only terms.

    Twice the offset negative log-likelihood kernel, summed over
    observations. Positive multiples and dropped y-only terms never move
    the argmin, so this is the cross-validation objective for any p.
    """
    alpha = np.asarray(alpha, dtype=float)
    lp = data.lp_mean + intercept + alpha[data.location]
    return 2.0 * float(np.sum(loglik_kernel(data.y, lp, data.phi, p)))


def assign_folds(data, k, seed):
    """Stratified fold labels: each location's rows are dealt round-robin.

    Redraws with a shifted seed when a fold comes out empty; five failed
    attempts raise.
    """
    n = len(data)
    if n < k:
        raise ValueError(f"cannot form {k} non-empty folds from {n} observations")
    for attempt in range(5):
        rng = np.random.default_rng(seed + attempt)
        folds = np.empty(n, dtype=int)
        for i in range(data.n_locations):
            idx = np.flatnonzero(data.location == i)
            if len(idx) == 0:
                continue
            rng.shuffle(idx)
            start = int(rng.integers(k))
            folds[idx] = (start + np.arange(len(idx))) % k
        if np.all(np.bincount(folds, minlength=k) > 0):
            return folds
    raise ValueError(f"could not populate all {k} folds after 5 attempts")


def _subtract(total, part):
    return _LocStats(
        s1=np.maximum(total.s1 - part.s1, 0.0),
        s2=np.maximum(total.s2 - part.s2, 0.0),
        p=total.p,
    )


def cross_validate(data, w, grid, cfg, p, retain_paths=False):
    """Pick (lambda1, lambda2) by k-fold holdout deviance.

    For each fold the model is fitted on the remaining folds at every
    grid point (largest penalties first, warm starts chained along the
    ridge axis) and scored on the holdout. The selected pair minimizes
    the fold-averaged deviance; ties prefer the larger lambda1, then the
    larger lambda2.
    """
    folds = assign_folds(data, grid.folds, grid.seed)
    total = _location_stats(data, p)
    holdout_stats = [
        _location_stats(data.subset(folds == f), p) for f in range(grid.folds)
    ]
    train_stats = [_subtract(total, hs) for hs in holdout_stats]

    lam1s = grid.lambda1_values()
    lam2s = grid.lambda2_values()
    shape = (len(lam2s), len(lam1s))
    scores = np.zeros(shape + (grid.folds,))
    paths = {} if retain_paths else None
    run_cfg = replace(cfg, track_iterates=False)

    for f in range(grid.folds):
        for i2, lam2 in enumerate(lam2s):
            alpha, intercept = None, 0.0
            for i1, lam1 in enumerate(lam1s):
                fit_cfg = replace(run_cfg, lambda1=float(lam1), lambda2=float(lam2))
                res = _fit_stats(
                    train_stats[f], w, fit_cfg,
                    alpha_init=alpha, intercept_init=intercept,
                )
                alpha = res.alpha
                intercept = res.intercept if res.intercept is not None else 0.0
                scores[i2, i1, f] = 2.0 * _ell(holdout_stats[f], alpha, intercept)
                if paths is not None:
                    paths[(i1, i2, f)] = alpha.copy()

    mean = scores.mean(axis=2)
    sd = scores.std(axis=2, ddof=1)

    best = None
    for i2, lam2 in enumerate(lam2s):
        for i1, lam1 in enumerate(lam1s):
            key = (mean[i2, i1], -lam1, -lam2)
            if best is None or key < best[0]:
                best = (key, float(lam1), float(lam2), i2 * len(lam1s) + i1)
    chosen = (best[1], best[2])

    with np.errstate(divide="ignore"):
        ll1 = np.log10(np.broadcast_to(lam1s, shape).ravel())
        ll2 = np.log10(np.broadcast_to(lam2s[:, None], shape).ravel())
    return CvReport(
        log_lambda1=ll1,
        log_lambda2=ll2,
        mean_deviance=mean.ravel(),
        sd_deviance=sd.ravel(),
        chosen=chosen,
        chosen_idx=best[3],
        folds=grid.folds,
        alphas=paths,
    )


def solution_path(data, w, lambdas, mix, cfg, p):
    """Trace warm-started estimates down a decreasing penalty ladder.

    Each ladder rung fits with lambda1 = mix*lambda and
    lambda2 = (1-mix)*lambda applied to the quadratic penalty forms.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(lambdas <= 0) or np.any(np.diff(lambdas) >= 0):
        raise ValueError("path requires a strictly decreasing positive sequence")
    if not 0.0 < mix <= 1.0:
        raise ValueError("mix must lie in (0, 1]; mix=1 is the pure ridge ladder")
    stats = _location_stats(data, p)
    alphas = np.zeros((len(lambdas), stats.n_locations))
    intercepts = np.zeros(len(lambdas)) if cfg.fit_intercept else None
    alpha, intercept = None, 0.0
    run_cfg = replace(cfg, track_iterates=False)
    for k, lam in enumerate(lambdas):
        fit_cfg = replace(run_cfg, lambda1=mix * lam, lambda2=(1.0 - mix) * lam)
        res = _fit_stats(stats, w, fit_cfg, alpha_init=alpha, intercept_init=intercept)
        alpha = res.alpha
        intercept = res.intercept if res.intercept is not None else 0.0
        alphas[k] = alpha
        if intercepts is not None:
            intercepts[k] = intercept
    return SolutionPath(lambdas=lambdas, mix=mix, alphas=alphas, intercepts=intercepts)
