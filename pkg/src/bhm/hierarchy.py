"""Nested bins built from the elementary accumulator by pairwise pooling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .accum import BinStats, IntegralEstimate, SampleAccumulator, integral_from_stats, pool

DEFAULT_MIN_COUNT = 10


@dataclass(frozen=True)
class HierarchyBin:
    level: int
    index: int
    lo: float
    hi: float
    stats: BinStats
    estimate: IntegralEstimate
    usable: bool


class BinHierarchy:
    """All bins of levels ``0..K`` stored as flat arrays, coarsest level first.

    Level ``n`` occupies ``slice(2**n - 1, 2**(n+1) - 1)`` of every array.
    ``weight`` is the factor ``2**-n`` each level carries in the fit objective.
    """

    def __init__(self, *, edges, levels, lo, hi, level, index, count, mean, m2,
                 total, min_count, weight=None):
        self.edges = np.asarray(edges, dtype=float)
        self.n_levels = int(levels)
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.level = np.asarray(level, dtype=np.int64)
        self.index = np.asarray(index, dtype=np.int64)
        self.count = np.asarray(count, dtype=np.int64)
        self.mean = np.asarray(mean, dtype=float)
        self.m2 = np.asarray(m2, dtype=float)
        self.total = int(total)
        self.min_count = int(min_count)
        self.value, self.error = integral_from_stats(self.count, self.mean, self.m2, self.total)
        self.usable = self.count >= self.min_count
        if weight is None:
            weight = 2.0 ** (-self.level.astype(float))
        self.weight = np.asarray(weight, dtype=float)
        # edge index bounds of every bin, used for knot alignment
        self.lo_edge = np.searchsorted(self.edges, self.lo)
        self.hi_edge = np.searchsorted(self.edges, self.hi)

    @property
    def K(self) -> int:
        return self.n_levels - 1

    @property
    def domain(self):
        return float(self.edges[0]), float(self.edges[-1])

    def __len__(self):
        return self.lo.size

    def level_slice(self, n: int) -> slice:
        return slice(2**n - 1, 2 ** (n + 1) - 1)

    def bin(self, j: int) -> HierarchyBin:
        return HierarchyBin(
            level=int(self.level[j]),
            index=int(self.index[j]),
            lo=float(self.lo[j]),
            hi=float(self.hi[j]),
            stats=BinStats(int(self.count[j]), float(self.mean[j]), float(self.m2[j])),
            estimate=IntegralEstimate(float(self.value[j]), float(self.error[j]), int(self.count[j])),
            usable=bool(self.usable[j]),
        )

    @property
    def levels(self):
        """Bins grouped per level as lists of ``HierarchyBin``."""
        out = [[] for _ in range(int(self.level.max()) + 1)]
        for j in range(len(self)):
            out[self.level[j]].append(self.bin(j))
        return out

    def n_usable(self, n: int) -> int:
        return int(np.count_nonzero(self.usable[self.level == n]))

    def inside(self, lo: float, hi: float, level: int | None = None):
        """Boolean mask of bins fully inside ``[lo, hi]``."""
        mask = (self.lo >= lo) & (self.hi <= hi)
        if level is not None:
            mask &= self.level == level
        return mask


def build(acc: SampleAccumulator, min_count: int = DEFAULT_MIN_COUNT) -> BinHierarchy:
    """Pool neighbouring bins level by level from the elementary bins upward."""
    if acc.total < 2:
        raise ValueError("building a hierarchy needs at least two recorded samples")
    K = acc.levels
    counts = [acc.count]
    means = [acc.mean]
    m2s = [acc.m2]
    for _ in range(K):
        c, mu, m2 = counts[-1], means[-1], m2s[-1]
        pc, pmu, pm2 = pool(c[0::2], mu[0::2], m2[0::2], c[1::2], mu[1::2], m2[1::2])
        counts.append(pc)
        means.append(pmu)
        m2s.append(pm2)
    counts.reverse()
    means.reverse()
    m2s.reverse()
    lo, hi, level, index = [], [], [], []
    for n in range(K + 1):
        step = 2 ** (K - n)
        idx = np.arange(2**n)
        lo.append(acc.edges[idx * step])
        hi.append(acc.edges[(idx + 1) * step])
        level.append(np.full(2**n, n))
        index.append(idx)
    return BinHierarchy(
        edges=acc.edges,
        levels=K + 1,
        lo=np.concatenate(lo),
        hi=np.concatenate(hi),
        level=np.concatenate(level),
        index=np.concatenate(index),
        count=np.concatenate(counts),
        mean=np.concatenate(means),
        m2=np.concatenate(m2s),
        total=acc.total,
        min_count=min_count,
    )


def bins_inside(h: BinHierarchy, lo: float, hi: float, level: int):
    """Level-``level`` bins lying fully inside ``[lo, hi]``, in order, usable or not."""
    if not lo < hi:
        raise ValueError("bins_inside requires lo < hi")
    return [h.bin(j) for j in np.flatnonzero(h.inside(lo, hi, level))]
