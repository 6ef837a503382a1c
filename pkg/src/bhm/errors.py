"""Error bands for fitted splines: covariance, bootstrap, fit evolution, robust ensemble."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .accum import SampleAccumulator, weighted_merge
from .hierarchy import build
from .splinefit import FitConfig, FitError, SplineModel, fit_division

DEFAULT_GRID = 512
ROBUST_LEVEL = 0.6827
MIN_ROBUST_RUNS = 30
METHODS = ("covariance", "bootstrap", "evolution", "robust")


@dataclass
class ErrorBand:
    x: np.ndarray
    sigma: np.ndarray
    method: str
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.method not in METHODS:
            raise ValueError(f"unknown error method {self.method!r}")
        if self.x.shape != self.sigma.shape:
            raise ValueError("x and sigma must have the same shape")
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be non-negative")

    def area(self) -> float:
        """Trapezoidal integral of sigma over the grid."""
        return float(np.trapezoid(self.sigma, self.x))


@dataclass
class EvolutionTrace:
    """Spline values on a fixed grid after every ``delta`` samples.

    ``snapshots[k - 1]`` holds the fit after ``k * delta`` samples.
    """

    delta: int
    k0: int
    x: np.ndarray
    snapshots: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.snapshots = np.atleast_2d(np.asarray(self.snapshots, dtype=float))
        if self.k0 < 1:
            raise ValueError("k0 must be >= 1")
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if self.snapshots.shape[1] != self.x.size:
            raise ValueError("every snapshot must cover the whole grid")

    @property
    def increments(self) -> np.ndarray:
        """``A_k = k f_k - (k-1) f_{k-1}`` for ``k > k0``."""
        f = self.snapshots
        k = np.arange(1, f.shape[0] + 1, dtype=float)[:, None]
        A = k[1:] * f[1:] - (k[1:] - 1.0) * f[:-1]
        return A[self.k0 - 1:]

    @property
    def sigma_star(self) -> np.ndarray:
        A = self.increments
        if A.shape[0] < 2:
            raise ValueError(f"need at least k0 + 2 = {self.k0 + 2} snapshots, got {self.snapshots.shape[0]}")
        return A.std(axis=0, ddof=1)


def default_grid(model: SplineModel, n: int = DEFAULT_GRID):
    lo, hi = model.domain
    return np.linspace(lo, hi, n)


def covariance_error(model: SplineModel, x):
    """Pointwise standard error of the spline from its parameter covariance."""
    var, scale = model.variance(x, with_scale=True)
    # negatives within rounding of the cancelling terms are clamped, larger ones are corruption
    if np.any(var < -1e-12 - 1e-10 * scale):
        raise ValueError(f"negative variance {var.min():.3g}: covariance is not positive semi-definite")
    sigma = np.sqrt(np.maximum(var, 0.0))
    return sigma if np.ndim(x) else float(sigma[0])


def covariance_band(model: SplineModel, grid=None) -> ErrorBand:
    grid = default_grid(model) if grid is None else np.asarray(grid, dtype=float)
    return ErrorBand(grid, covariance_error(model, grid), "covariance")


def threads_from_env(threads=None) -> int:
    if threads is None:
        threads = os.environ.get("BHM_THREADS", 1)
    threads = int(threads)
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def _replica_fit(parts, weights, knots, cfg, grid):
    acc = weighted_merge(parts, weights)
    h = build(acc, cfg.min_count)
    try:
        model, diag = fit_division(h, knots, cfg)
    except FitError:
        return None
    if diag.rank < diag.n_free:
        return None
    return model(grid)


def bootstrap_error(parts, knots, cfg: FitConfig | None = None, m_tilde: int | None = None,
                    grid=None, seed: int = 0, threads=None, return_replicas=False):
    """Standard deviation over fixed-knot fits to resampled combinations of ``parts``.

    Each replica draws multinomial integer multiplicities summing to
    ``M = len(parts)`` and fits the pooled histogram with the given knots
    and no acceptance test.  Rank-deficient replicas are redrawn; more than
    10% redraws abort with ``FitError``.
    """
    cfg = cfg or FitConfig()
    parts = list(parts)
    M = len(parts)
    if M == 0:
        raise ValueError("bootstrap needs at least one part")
    m_tilde = M if m_tilde is None else int(m_tilde)
    if m_tilde < M:
        raise ValueError("m_tilde must be >= the number of parts")
    knots = np.asarray(knots, dtype=float)
    grid = np.linspace(knots[0], knots[-1], DEFAULT_GRID) if grid is None else np.asarray(grid, dtype=float)
    rng = np.random.default_rng(seed)
    threads = threads_from_env(threads)
    max_redraws = int(0.1 * m_tilde)

    def run(weights):
        if threads == 1:
            return [_replica_fit(parts, w, knots, cfg, grid) for w in weights]
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda w: _replica_fit(parts, w, knots, cfg, grid), weights))

    # weights are drawn in the calling thread so results do not depend on threads
    values = []
    redraws = 0
    need = m_tilde
    while need:
        weights = rng.multinomial(M, np.full(M, 1.0 / M), size=need)
        got = [v for v in run(weights) if v is not None]
        redraws += need - len(got)
        if redraws > max_redraws:
            raise FitError(f"{redraws} of {m_tilde} bootstrap replicas were rank deficient")
        values.extend(got)
        need = m_tilde - len(values)
    values = np.array(values)
    sigma = values.std(axis=0, ddof=1) if m_tilde > 1 else np.zeros(grid.size)
    band = ErrorBand(grid, sigma, "bootstrap", {"replicas": m_tilde, "redraws": redraws})
    return (band, values) if return_replicas else band


def evolution_error(trace: EvolutionTrace) -> ErrorBand:
    """``sigma_star / sqrt(k_final)`` from the increments of the fit sequence."""
    s = trace.sigma_star
    k_final = trace.snapshots.shape[0]
    return ErrorBand(trace.x, s / np.sqrt(k_final), "evolution",
                     {"delta": trace.delta, "k0": trace.k0, "k_final": k_final, "sigma_star": s})


def robust_error(runs, x=None, min_runs: int = MIN_ROBUST_RUNS):
    """Half-width of the smallest interval around the ensemble mean holding 68.27% of values.

    ``runs`` is a list of fitted models evaluated at ``x``, or, with ``x``
    omitted, an array of values with runs along the first axis.
    """
    if x is None:
        vals = np.asarray(runs, dtype=float)
    else:
        vals = np.array([m(x) for m in runs], dtype=float)
    if vals.shape[0] < min_runs:
        raise ValueError(f"robust error needs at least {min_runs} runs, got {vals.shape[0]}")
    dev = np.abs(vals - vals.mean(axis=0))
    return np.quantile(dev, ROBUST_LEVEL, axis=0, method="inverted_cdf")
