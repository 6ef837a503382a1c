"""Streaming per-bin statistics over the elementary bins of a 1-d domain.

Each elementary bin keeps ``(count, mean, m2)`` where ``m2`` is the sum of
squared deviations from the running mean.  Bins are combined with the pooled
(parallel) variance formula, so accumulators filled by different workers can
be merged without loss.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAX_BINS = 2**26


class GridMismatchError(ValueError):
    """Raised when two accumulators do not share domain, K and edges."""


class HistogramFormatError(ValueError):
    """Raised when a BHMHIST file is malformed."""


@dataclass(frozen=True)
class Domain:
    x_lo: float
    x_hi: float

    def __post_init__(self):
        lo, hi = float(self.x_lo), float(self.x_hi)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError(f"domain bounds must be finite, got [{lo}, {hi}]")
        if not lo < hi:
            raise ValueError(f"domain requires x_lo < x_hi, got [{lo}, {hi}]")
        object.__setattr__(self, "x_lo", lo)
        object.__setattr__(self, "x_hi", hi)

    @property
    def width(self) -> float:
        return self.x_hi - self.x_lo

    def __contains__(self, x) -> bool:
        return self.x_lo <= x <= self.x_hi


@dataclass(frozen=True)
class BinStats:
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0


@dataclass(frozen=True)
class IntegralEstimate:
    value: float
    error: float
    count: int


def pool(c_a, mu_a, m2_a, c_b, mu_b, m2_b):
    """Pooled combination of two sets of (count, mean, m2); works on arrays.

    Empty inputs combine to an empty result with mean and m2 exactly zero.
    """
    c_a = np.asarray(c_a)
    c_b = np.asarray(c_b)
    c = c_a + c_b
    safe = np.where(c > 0, c, 1).astype(float)
    mu = np.where(c > 0, (c_a * np.asarray(mu_a) + c_b * np.asarray(mu_b)) / safe, 0.0)
    delta = np.asarray(mu_b) - np.asarray(mu_a)
    m2 = np.where(
        c > 0, np.asarray(m2_a) + np.asarray(m2_b) + delta * delta * (c_a * c_b / safe), 0.0
    )
    return c, mu, m2


def integral_from_stats(count, mean, m2, total):
    """Sampled integral ``I = mean*count/N`` and its error for arrays of bins.

    The error is ``sqrt(M2(I) / ((N-1) N))`` with
    ``M2(I) = m2 + mean**2 * count * (N - count) / N``.
    """
    count = np.asarray(count, dtype=float)
    mean = np.asarray(mean, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    if total < 1:
        raise ValueError("integral requires at least one recorded sample")
    value = mean * count / total
    if total < 2:
        return value, np.full_like(value, np.nan)
    m2_int = m2 + mean * mean * count * (total - count) / total
    error = np.sqrt(np.maximum(m2_int, 0.0) / ((total - 1.0) * total))
    return value, error


class SampleAccumulator:
    """Per-bin streaming statistics for ``2**K`` elementary bins.

    Parameters
    ----------
    domain : Domain
        Sampling interval.
    levels : int
        ``K``; the accumulator has ``2**K`` elementary bins.
    edges : array-like, optional
        ``2**K + 1`` strictly increasing bin boundaries whose endpoints match
        the domain.  Uniform when omitted.
    max_bins : int
        Refuse grids with more elementary bins than this.
    """

    def __init__(self, domain: Domain, levels: int, edges=None, max_bins: int = MAX_BINS):
        if int(levels) != levels or levels < 0:
            raise ValueError(f"levels must be a non-negative integer, got {levels}")
        levels = int(levels)
        n_bins = 2**levels
        if n_bins > max_bins:
            raise ValueError(f"2**{levels} elementary bins exceed the cap of {max_bins}")
        self.domain = domain
        self.levels = levels
        if edges is None:
            self.edges = np.linspace(domain.x_lo, domain.x_hi, n_bins + 1)
            self.uniform = True
        else:
            edges = np.asarray(edges, dtype=float)
            if edges.shape != (n_bins + 1,):
                raise ValueError(f"expected {n_bins + 1} edges, got {edges.shape}")
            if not np.all(np.diff(edges) > 0):
                raise ValueError("edges must be strictly increasing")
            if edges[0] != domain.x_lo or edges[-1] != domain.x_hi:
                raise ValueError("edge endpoints must match the domain")
            self.edges = edges
            self.uniform = bool(np.array_equal(edges, np.linspace(domain.x_lo, domain.x_hi, n_bins + 1)))
        self.count = np.zeros(n_bins, dtype=np.int64)
        self.mean = np.zeros(n_bins)
        self.m2 = np.zeros(n_bins)
        self.total = 0

    @property
    def n_bins(self) -> int:
        return self.count.size

    def __repr__(self):
        return (
            f"SampleAccumulator(domain=[{self.domain.x_lo}, {self.domain.x_hi}], "
            f"levels={self.levels}, total={self.total})"
        )

    def copy(self) -> "SampleAccumulator":
        out = SampleAccumulator.__new__(SampleAccumulator)
        out.domain = self.domain
        out.levels = self.levels
        out.edges = self.edges.copy()
        out.uniform = self.uniform
        out.count = self.count.copy()
        out.mean = self.mean.copy()
        out.m2 = self.m2.copy()
        out.total = self.total
        return out

    def empty_like(self) -> "SampleAccumulator":
        out = self.copy()
        out.count[:] = 0
        out.mean[:] = 0.0
        out.m2[:] = 0.0
        out.total = 0
        return out

    def bin(self, i: int) -> BinStats:
        return BinStats(int(self.count[i]), float(self.mean[i]), float(self.m2[i]))

    def locate(self, x):
        """Elementary bin index for each x; interior edges belong to the right bin."""
        x = np.asarray(x, dtype=float)
        bad = ~((x >= self.domain.x_lo) & (x <= self.domain.x_hi))
        if np.any(bad):
            first = x[bad].flat[0]
            raise ValueError(f"x={first!r} lies outside [{self.domain.x_lo}, {self.domain.x_hi}]")
        idx = np.searchsorted(self.edges, x, side="right") - 1
        return np.minimum(idx, self.n_bins - 1)

    def record(self, x: float, v: float = 1.0) -> "SampleAccumulator":
        """Add one sampled value ``v`` at position ``x`` (Welford update)."""
        i = int(self.locate(x))
        v = float(v)
        n = self.count[i] + 1
        delta = v - self.mean[i]
        self.mean[i] += delta / n
        self.m2[i] += delta * (v - self.mean[i])
        self.count[i] = n
        self.total += 1
        return self

    def record_many(self, x, v=None) -> "SampleAccumulator":
        """Vectorized ``record``: batch statistics pooled into each bin."""
        x = np.asarray(x, dtype=float).ravel()
        if v is None:
            v = np.ones_like(x)
        else:
            v = np.broadcast_to(np.asarray(v, dtype=float), x.shape).ravel()
        if x.size == 0:
            return self
        idx = self.locate(x)
        nb = self.n_bins
        c_b = np.bincount(idx, minlength=nb)
        sums = np.bincount(idx, weights=v, minlength=nb)
        mu_b = np.where(c_b > 0, sums / np.maximum(c_b, 1), 0.0)
        dev = v - mu_b[idx]
        m2_b = np.bincount(idx, weights=dev * dev, minlength=nb)
        self.count, self.mean, self.m2 = pool(self.count, self.mean, self.m2, c_b, mu_b, m2_b)
        self.total += int(x.size)
        return self

    def same_grid(self, other: "SampleAccumulator") -> bool:
        return (
            self.domain == other.domain
            and self.levels == other.levels
            and np.array_equal(self.edges, other.edges)
        )

    def merge(self, other: "SampleAccumulator") -> "SampleAccumulator":
        """Return a new accumulator holding the pooled statistics of both."""
        if not self.same_grid(other):
            raise GridMismatchError("cannot merge accumulators on different grids")
        out = self.copy()
        out.count, out.mean, out.m2 = pool(
            self.count, self.mean, self.m2, other.count, other.mean, other.m2
        )
        out.total = self.total + other.total
        return out

    __add__ = merge

    def repeated(self, times: int) -> "SampleAccumulator":
        """Statistics as if every recorded value had been recorded ``times`` times."""
        if times < 0:
            raise ValueError("times must be non-negative")
        out = self.copy()
        out.count = self.count * times
        out.m2 = self.m2 * times
        out.mean = np.where(out.count > 0, self.mean, 0.0)
        out.total = self.total * times
        return out

    def integral(self, i: int, with_error: bool = True) -> IntegralEstimate:
        return integral(self, self.bin(i), with_error=with_error)

    def integrals(self):
        """Arrays ``(I_i, dI_i)`` over all elementary bins."""
        if self.total < 2:
            raise ValueError("integral errors need at least two recorded samples")
        return integral_from_stats(self.count, self.mean, self.m2, self.total)


def new_accumulator(domain: Domain, levels: int, edges=None, max_bins: int = MAX_BINS):
    return SampleAccumulator(domain, levels, edges=edges, max_bins=max_bins)


def record(acc: SampleAccumulator, x: float, v: float = 1.0) -> SampleAccumulator:
    return acc.record(x, v)


def merge(a: SampleAccumulator, b: SampleAccumulator) -> SampleAccumulator:
    return a.merge(b)


def integral(acc: SampleAccumulator, stats: BinStats, with_error: bool = True) -> IntegralEstimate:
    """Integral estimate for one bin's statistics under the accumulator's total."""
    if stats.count == 0:
        return IntegralEstimate(0.0, 0.0, 0)
    if with_error and acc.total < 2:
        raise ValueError("integral errors need at least two recorded samples")
    if acc.total < 1:
        raise ValueError("no samples recorded")
    value, error = integral_from_stats(stats.count, stats.mean, stats.m2, acc.total)
    err = float(error) if with_error else math.nan
    return IntegralEstimate(float(value), err, int(stats.count))


def weighted_merge(parts, weights) -> SampleAccumulator:
    """Merge ``parts`` with non-negative integer multiplicities ``weights``."""
    parts = list(parts)
    weights = np.asarray(weights, dtype=np.int64)
    if len(parts) != weights.size:
        raise ValueError("one weight per part is required")
    first = parts[0]
    for p in parts[1:]:
        if not first.same_grid(p):
            raise GridMismatchError("parts must share one grid")
    count = np.stack([p.count for p in parts])
    mean = np.stack([p.mean for p in parts])
    m2 = np.stack([p.m2 for p in parts])
    w = weights[:, None]
    wc = w * count
    c = wc.sum(axis=0)
    safe = np.maximum(c, 1).astype(float)
    mu = np.where(c > 0, (wc * mean).sum(axis=0) / safe, 0.0)
    # within-part spread scaled by multiplicity plus between-part spread
    m2_c = (w * m2).sum(axis=0) + (wc * (mean - mu) ** 2).sum(axis=0)
    m2_c = np.where(c > 0, m2_c, 0.0)
    out = first.empty_like()
    out.count = c.astype(np.int64)
    out.mean = mu
    out.m2 = m2_c
    out.total = int(sum(int(wi) * p.total for wi, p in zip(weights, parts)))
    return out


# --- BHMHIST v1 -------------------------------------------------------------

def _fmt(x: float) -> str:
    return "%.17g" % x


def write_hist(acc: SampleAccumulator, path) -> None:
    lines = [
        "BHMHIST 1",
        f"domain {_fmt(acc.domain.x_lo)} {_fmt(acc.domain.x_hi)}",
        f"K {acc.levels}",
        f"N {acc.total}",
    ]
    if acc.uniform:
        lines.append("edges uniform")
    else:
        lines.append("edges " + " ".join(_fmt(e) for e in acc.edges))
    for i in np.flatnonzero(acc.count > 0):
        lines.append(f"bin {i} {acc.count[i]} {_fmt(acc.mean[i])} {_fmt(acc.m2[i])}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_hist(path) -> SampleAccumulator:
    text = Path(path).read_text().splitlines()
    if len(text) < 5 or text[0].strip() != "BHMHIST 1":
        raise HistogramFormatError(f"{path}: not a BHMHIST v1 file")
    try:
        tag, lo, hi = text[1].split()
        if tag != "domain":
            raise HistogramFormatError(f"{path}: expected domain line")
        tag, k = text[2].split()
        if tag != "K":
            raise HistogramFormatError(f"{path}: expected K line")
        tag, n = text[3].split()
        if tag != "N":
            raise HistogramFormatError(f"{path}: expected N line")
        edge_fields = text[4].split()
        if edge_fields[0] != "edges":
            raise HistogramFormatError(f"{path}: expected edges line")
        domain = Domain(float(lo), float(hi))
        edges = None if edge_fields[1:] == ["uniform"] else [float(e) for e in edge_fields[1:]]
        acc = SampleAccumulator(domain, int(k), edges=edges)
        acc.total = int(n)
        for line in text[5:]:
            if not line.strip():
                continue
            tag, i, c, mu, m2 = line.split()
            if tag != "bin":
                raise HistogramFormatError(f"{path}: unexpected record {line!r}")
            i = int(i)
            acc.count[i] = int(c)
            acc.mean[i] = float(mu)
            acc.m2[i] = float(m2)
    except (ValueError, IndexError) as exc:
        if isinstance(exc, HistogramFormatError):
            raise
        raise HistogramFormatError(f"{path}: {exc}") from exc
    if acc.count.sum() != acc.total:
        raise HistogramFormatError(f"{path}: bin counts do not sum to N")
    return acc
