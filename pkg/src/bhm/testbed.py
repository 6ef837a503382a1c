"""Reference distributions, samplers and ensemble drivers.

Every target is sampled from ``|f| / integral |f|`` and records ``v = sign f(x)``,
so the function reconstructed from the samples is ``truth(x) = f(x) / integral |f|``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .accum import Domain, SampleAccumulator
from .errors import EvolutionTrace
from .hierarchy import BinHierarchy, build
from .splinefit import FitConfig, adaptive_fit
from .transforms import Transform, sample_weight

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

BURN_IN = 1000
CHUNK = 1 << 20
SAMPLERS = ("inverse-cdf", "rejection", "markov-chain")


@dataclass(frozen=True)
class TestDistribution:
    """A target function with its domain and default sampling scheme.

    ``domain`` may be semi-infinite; ``fit_domain`` is the interval the
    accumulator covers after ``transform`` (the domain itself when finite).
    """

    __test__ = False  # not a pytest class

    name: str
    f: Callable
    domain: tuple
    sampler: str
    norm: float
    envelope: float | None = None
    inverse_cdf: Callable | None = None
    transform: Transform | None = None
    sign_points: tuple = ()

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}")

    @property
    def fit_domain(self) -> Domain:
        if self.transform is not None and self.transform.maps_domain:
            lo, hi = self.transform.y(np.array(self.domain[0])), 1.0
            return Domain(float(lo), hi)
        return Domain(*self.domain)

    def sign(self, x):
        return np.where(np.asarray(self.f(x)) < 0, -1.0, 1.0)

    def truth(self, x):
        """The normalized function ``f / integral |f|`` the fit reconstructs."""
        return np.asarray(self.f(np.asarray(x, dtype=float))) / self.norm


def _cubic(x):
    return 1 - 1.5 * x + 2 * x**2 - 0.5 * x**3


def _quartic(x):
    return x**4 - 0.8 * x**2


def _exp(x):
    return np.exp(-3.0 * x)


def _cosine(x):
    return 10.0 + np.cos(10.0 * x)


def _divergent(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return 1.0 / (np.sqrt(x) * (1.0 + x))


SIGN_A = (0.99, 1.0)  # decay rates of f_+1 and f_-1
SIGN_DOMAIN = (0.0, 3.0)


def _sign_parts(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-SIGN_A[0] * x), np.exp(-SIGN_A[1] * x)


def _signtoy(x):
    fp, fm = _sign_parts(x)
    return fp - fm


def _exp_moment(a, lo, hi):
    return (math.exp(-a * lo) - math.exp(-a * hi)) / a


def sign_chain_norm():
    """``integral (f_1 + f_-1)``: the chain samples the pair, not ``|f|``."""
    lo, hi = SIGN_DOMAIN
    return _exp_moment(SIGN_A[0], lo, hi) + _exp_moment(SIGN_A[1], lo, hi)


def _abs_norm(f, lo, hi, points=()):
    val, _ = integrate.quad(lambda x: abs(f(x)), lo, hi, points=points or None, epsabs=0, epsrel=1e-12,
                            limit=200)
    return val


def _exp_inverse_cdf(u):
    lo, hi = 1.0, 2.8
    return lo - np.log1p(-u * -np.expm1(-3.0 * (hi - lo))) / 3.0


def _divergent_inverse_cdf(u):
    # CDF = (2/pi) arctan(sqrt(x))
    return np.tan(0.5 * np.pi * u) ** 2


def _make(name):
    if name == "cubic":
        return TestDistribution("cubic", _cubic, (1.0, 2.8), "rejection", _abs_norm(_cubic, 1.0, 2.8), envelope=2.1)
    if name == "quartic":
        pts = (-math.sqrt(0.8), 0.0, math.sqrt(0.8))
        return TestDistribution("quartic", _quartic, (-1.0, 1.0), "rejection",
                                _abs_norm(_quartic, -1.0, 1.0, pts), envelope=0.2, sign_points=pts)
    if name == "exp":
        return TestDistribution("exp", _exp, (1.0, 2.8), "inverse-cdf", _exp_moment(3.0, 1.0, 2.8),
                                inverse_cdf=_exp_inverse_cdf)
    if name == "cosine":
        hi = math.pi + 0.6
        norm = 10.0 * (hi - 1.0) + (math.sin(10.0 * hi) - math.sin(10.0)) / 10.0
        return TestDistribution("cosine", _cosine, (1.0, hi), "rejection", norm, envelope=11.0)
    if name == "divergent":
        return TestDistribution("divergent", _divergent, (0.0, math.inf), "inverse-cdf", math.pi,
                                inverse_cdf=_divergent_inverse_cdf, transform=Transform("arctan", 0.5))
    if name == "signtoy":
        return TestDistribution("signtoy", _signtoy, SIGN_DOMAIN, "markov-chain", sign_chain_norm())
    raise KeyError(f"unknown distribution {name!r}; choose from {BUILTIN}")


BUILTIN = ("cubic", "quartic", "exp", "cosine", "divergent", "signtoy")
_CACHE: dict = {}


def builtin(name: str) -> TestDistribution:
    if name not in _CACHE:
        _CACHE[name] = _make(name)
    return _CACHE[name]


# --- sign-problem Markov chain ---------------------------------------------------

@dataclass
class SignChainState:
    sector: int = 1
    x: float = 0.0
    step: int = 0  # even steps switch the sector, odd steps move x

    def __post_init__(self):
        if self.sector not in (1, -1):
            raise ValueError("sector must be +1 or -1")
        lo, hi = SIGN_DOMAIN
        if not lo <= self.x <= hi:
            raise ValueError("x outside the chain domain")


def _rate(sector):
    return SIGN_A[0] if sector == 1 else SIGN_A[1]


def sign_chain_step(state: SignChainState, rng) -> tuple[SignChainState, float, float]:
    """One update of the two-sector chain; returns ``(new_state, x, v)``."""
    u = rng.random(2)
    s, x = state.sector, state.x
    if state.step % 2 == 0:
        # f_{-s}(x) / f_s(x)
        if u[0] < math.exp(-(_rate(-s) - _rate(s)) * x):
            s = -s
    else:
        lo, hi = SIGN_DOMAIN
        xp = lo + (hi - lo) * u[0]
        if u[1] < math.exp(-_rate(s) * (xp - x)):
            x = xp
    new = SignChainState(s, x, state.step + 1)
    return new, x, float(s)


@njit(cache=True)
def _chain_kernel(u, sector, x, step, lo, hi, a_plus, a_minus, xs, vs):
    for i in range(u.shape[0]):
        a_s = a_plus if sector == 1 else a_minus
        if step % 2 == 0:
            a_o = a_minus if sector == 1 else a_plus
            if u[i, 0] < math.exp(-(a_o - a_s) * x):
                sector = -sector
        else:
            xp = lo + (hi - lo) * u[i, 0]
            if u[i, 1] < math.exp(-a_s * (xp - x)):
                x = xp
        step += 1
        xs[i] = x
        vs[i] = sector
    return sector, x, step


class SignChain:
    """Stateful chain producing ``(x, v = sector)`` records in blocks."""

    def __init__(self, seed=None, burn_in: int = BURN_IN, state: SignChainState | None = None):
        self.rng = np.random.default_rng(seed)
        self.state = state or SignChainState(1, 0.5 * sum(SIGN_DOMAIN), 0)
        if burn_in:
            self.draw(burn_in)

    def draw(self, n: int):
        xs = np.empty(n)
        vs = np.empty(n)
        s = self.state
        sector, x, step = s.sector, s.x, s.step
        for start in range(0, n, CHUNK):
            stop = min(n, start + CHUNK)
            u = self.rng.random((stop - start, 2))
            sector, x, step = _chain_kernel(u, sector, x, step, SIGN_DOMAIN[0], SIGN_DOMAIN[1],
                                            SIGN_A[0], SIGN_A[1], xs[start:stop], vs[start:stop])
        self.state = SignChainState(int(sector), float(x), int(step))
        return xs, vs


# --- i.i.d. samplers ---------------------------------------------------------------

class Sampler:
    """Draws ``(x, v)`` pairs from a distribution, keeping its random stream between calls."""

    def __init__(self, dist: TestDistribution, seed=None):
        self.dist = dist
        if dist.sampler == "markov-chain":
            self.chain = SignChain(seed)
        else:
            self.chain = None
            self.rng = np.random.default_rng(seed)

    def draw(self, n: int):
        if n < 0:
            raise ValueError("n must be >= 0")
        d = self.dist
        if self.chain is not None:
            return self.chain.draw(n)
        if d.sampler == "inverse-cdf":
            x = d.inverse_cdf(self.rng.random(n))
        else:
            x = self._reject(n)
        return x, d.sign(x)

    def _reject(self, n):
        d = self.dist
        lo, hi = d.domain
        out = [np.empty(0)]
        have = 0
        while have < n:
            m = max(1024, int(1.3 * (n - have) * d.envelope * (hi - lo) / d.norm))
            x = self.rng.uniform(lo, hi, m)
            fx = np.abs(d.f(x))
            if np.any(fx > d.envelope):
                raise RuntimeError(f"{d.name}: rejection envelope {d.envelope} violated")
            keep = x[self.rng.random(m) * d.envelope < fx]
            out.append(keep)
            have += keep.size
        return np.concatenate(out)[:n]

    def fill(self, acc: SampleAccumulator, n: int, transform: Transform | None = None):
        """Draw ``n`` points and record them (transformed and weighted) into ``acc``."""
        t = self.dist.transform if transform is None else transform
        x, v = self.draw(n)
        if n == 0:
            return acc
        if t is not None:
            v = v * sample_weight(t, x)
            x = t.y(x)
        return acc.record_many(x, v)


def accumulator_for(dist: TestDistribution, levels: int, transform: Transform | None = None) -> SampleAccumulator:
    t = dist.transform if transform is None else transform
    if t is not None and t.maps_domain:
        lo = float(t.y(np.array(dist.domain[0])))
        return SampleAccumulator(Domain(lo, 1.0), levels)
    return SampleAccumulator(Domain(*dist.domain), levels)


def sample(dist: TestDistribution, n: int, seed=None, acc: SampleAccumulator | None = None,
           transform: Transform | None = None, levels: int = 10) -> SampleAccumulator:
    """Record ``n`` draws from ``dist`` into ``acc`` (a fresh ``2**levels`` grid when omitted)."""
    if acc is None:
        acc = accumulator_for(dist, levels, transform)
    return Sampler(dist, seed).fill(acc, n, transform)


def sample_parts(dist: TestDistribution, n: int, parts: int, seed=None, levels: int = 10,
                 transform: Transform | None = None):
    """``parts`` accumulators from one stream, each holding about ``n / parts`` points."""
    if parts < 1:
        raise ValueError("parts must be >= 1")
    s = Sampler(dist, seed)
    sizes = np.full(parts, n // parts)
    sizes[: n % parts] += 1
    return [s.fill(accumulator_for(dist, levels, transform), int(k), transform) for k in sizes]


# --- baselines ---------------------------------------------------------------------

@dataclass(frozen=True)
class StepFunction:
    edges: np.ndarray
    heights: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any((x < self.edges[0]) | (x > self.edges[-1])):
            raise ValueError("x outside the histogram range")
        i = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.heights.size - 1)
        return self.heights[i]

    def integrals(self):
        return self.heights * np.diff(self.edges)


def naive_histogram(acc: SampleAccumulator) -> StepFunction:
    """Staircase ``mean_i count_i / (N width_i)`` on the elementary bins."""
    width = np.diff(acc.edges)
    total = max(acc.total, 1)
    return StepFunction(acc.edges.copy(), acc.mean * acc.count / (total * width))


def finest_usable_partition(h: BinHierarchy):
    """Indices of the finest bins tiling the domain in which every bin is usable.

    A bin is refined into its two children only when both are usable, so
    underpopulated elementary bins end up merged with their neighbours.
    """
    out = []
    stack = [0]
    while stack:
        j = stack.pop()
        n, i = int(h.level[j]), int(h.index[j])
        if n < h.K:
            c0 = 2 ** (n + 1) - 1 + 2 * i
            if h.usable[c0] and h.usable[c0 + 1]:
                stack.extend((c0 + 1, c0))
                continue
        out.append(j)
    return np.array(out, dtype=np.int64)


def elementary_hierarchy(h: BinHierarchy) -> BinHierarchy:
    """Single-level pseudo-hierarchy holding only the finest usable partition."""
    idx = finest_usable_partition(h)
    return BinHierarchy(
        edges=h.edges, levels=h.n_levels, lo=h.lo[idx], hi=h.hi[idx],
        level=np.zeros(idx.size, np.int64), index=np.arange(idx.size),
        count=h.count[idx], mean=h.mean[idx], m2=h.m2[idx], total=h.total,
        min_count=h.min_count, weight=np.ones(idx.size),
    )


def elementary_only_fit(h: BinHierarchy, cfg: FitConfig | None = None):
    """Adaptive fit against the finest usable bins alone (no coarser levels)."""
    return adaptive_fit(elementary_hierarchy(h), cfg)


# --- experiment drivers ----------------------------------------------------------

@dataclass
class Run:
    seed: int
    acc: SampleAccumulator
    hierarchy: BinHierarchy
    model: object
    diag: object
    extra: dict = field(default_factory=dict)


def fit_run(dist: TestDistribution, n: int, seed, levels: int = 10, cfg: FitConfig | None = None,
            transform: Transform | None = None) -> Run:
    cfg = cfg or FitConfig()
    acc = sample(dist, n, seed, transform=transform, levels=levels)
    h = build(acc, cfg.min_count)
    model, diag = adaptive_fit(h, cfg)
    return Run(seed, acc, h, model, diag)


def ensemble(dist: TestDistribution, n: int, seeds, levels: int = 10, cfg: FitConfig | None = None,
             transform: Transform | None = None):
    return [fit_run(dist, n, s, levels, cfg, transform) for s in seeds]


def evolution_trace(dist: TestDistribution, n: int, delta: int, k0: int, grid, seed=None, levels: int = 10,
                    cfg: FitConfig | None = None) -> EvolutionTrace:
    """Refit after every ``delta`` samples of one stream and collect the spline values.

    Only complete blocks of ``delta`` samples are used.
    """
    cfg = cfg or FitConfig()
    grid = np.asarray(grid, dtype=float)
    s = Sampler(dist, seed)
    acc = accumulator_for(dist, levels)
    snaps = []
    for _ in range(n // delta):
        s.fill(acc, delta)
        model, _ = adaptive_fit(build(acc, cfg.min_count), cfg)
        snaps.append(model(grid))
    return EvolutionTrace(delta, k0, grid, np.array(snaps))
