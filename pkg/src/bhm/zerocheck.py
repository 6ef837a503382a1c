"""Is the sampled hierarchy distinguishable from the zero function?"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from .hierarchy import BinHierarchy


class Verdict(str, enum.Enum):
    CONSISTENT_WITH_ZERO = "ConsistentWithZero"
    CERTAINLY_INCONSISTENT = "CertainlyInconsistent"


@dataclass(frozen=True)
class LevelExcess:
    n: int
    n_tilde: int
    chi2_over_n: float
    excess: float


@dataclass
class ZeroVerdict:
    verdict: Verdict
    triggered_condition: str | None
    levels: list = field(default_factory=list)

    @property
    def consistent_with_zero(self) -> bool:
        return self.verdict is Verdict.CONSISTENT_WITH_ZERO

    def excess_table(self):
        return [(e.n, e.n_tilde, e.excess) for e in self.levels]


def level_excess(chi2, n_tilde, method="exact"):
    """Excess of ``chi2/n_tilde`` over 1 in standard deviations.

    ``method="normal"`` is ``(chi2/n - 1) / sqrt(2/n)``.  ``method="exact"``
    converts the chi-square tail probability with ``n_tilde`` degrees of
    freedom into the equivalent one-sided Gaussian deviation, which keeps the
    false-alarm rate of each tier at its nominal value when ``n_tilde`` is small.
    """
    if n_tilde <= 0:
        return -np.inf
    if method == "normal":
        return (chi2 / n_tilde - 1.0) / np.sqrt(2.0 / n_tilde)
    if method != "exact":
        raise ValueError(f"unknown excess method {method!r}")
    if not np.isfinite(chi2):
        return np.inf
    return float(stats.norm.isf(stats.chi2.sf(chi2, n_tilde)))


def classify(excess) -> str | None:
    """Return the first satisfied condition label among i-iv, else None."""
    e = np.asarray(list(excess), dtype=float)
    n4 = int(np.count_nonzero(e >= 4))
    n3 = int(np.count_nonzero(e >= 3))
    n2 = int(np.count_nonzero(e >= 2))
    if n4 >= 1:
        return "i"
    if n3 >= 2:
        return "ii"
    if n3 >= 1 and n2 >= 3:
        return "iii"
    if n2 >= 4:
        return "iv"
    return None


def check_zero(h: BinHierarchy, method: str = "exact") -> ZeroVerdict:
    """Test every hierarchy level against the zero function.

    Bins with zero error and nonzero integral are deterministic evidence of a
    nonzero function and make the level's excess infinite.
    """
    levels = []
    for n in np.unique(h.level):
        at = (h.level == n) & h.usable
        err = h.error[at]
        val = h.value[at]
        det = err == 0
        if np.any(det & (val != 0)):
            chi2 = np.inf
        else:
            chi2 = float(np.sum((val[~det] / err[~det]) ** 2))
        n_tilde = int(np.count_nonzero(~det))
        if n_tilde == 0 and not np.isinf(chi2):
            continue
        n_eff = max(n_tilde, 1)
        levels.append(LevelExcess(int(n), n_tilde, chi2 / n_eff, level_excess(chi2, n_eff, method)))
    cond = classify([lv.excess for lv in levels])
    verdict = Verdict.CONSISTENT_WITH_ZERO if cond is None else Verdict.CERTAINLY_INCONSISTENT
    return ZeroVerdict(verdict, cond, levels)


def evolution_accept(model_n, model_2n, alpha: float) -> bool:
    """Accept when the spline changed by less than ``alpha`` of its magnitude.

    Both L1 integrals run over the shared domain with the union of knots as
    quadrature breakpoints.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    lo, hi = model_2n.domain
    if model_n.domain != (lo, hi):
        raise ValueError("models must share one domain")
    pts = np.union1d(model_n.breakpoints, model_2n.breakpoints)[1:-1]
    kw = dict(points=pts if pts.size else None, limit=200 + 10 * pts.size)
    rhs, _ = integrate.quad(lambda x: abs(float(model_2n(x))), lo, hi, epsabs=0, epsrel=1e-10, **kw)
    if rhs == 0:
        return False
    lhs, _ = integrate.quad(
        lambda x: abs(float(model_n(x)) - float(model_2n(x))), lo, hi, epsabs=1e-10 * rhs, epsrel=1e-10, **kw
    )
    return lhs < alpha * rhs
