"""Polynomial splines fitted to the sampled integrals of a bin hierarchy.

The spline is parametrized in truncated-power form: the ``m + 1``
coefficients of the leftmost piece plus one ``m``-th order jump amplitude per
interior knot, so that continuity of derivatives ``0..m-1`` holds by
construction.  Every piece also carries its coefficients in its own local
coordinate ``u = (x - center) / halfwidth``; ``param_map`` is the linear map
from the free parameters to these local coefficients.

Bins whose sampled integral has zero error (all values identical and the bin
holding every sample) cannot enter a chi-square; they are imposed as exact
linear equality constraints instead.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import comb, factorial

from .hierarchy import BinHierarchy


class FitError(ValueError):
    """The least-squares problem is not solvable as posed."""


class SplineFormatError(ValueError):
    """Raised when a BHMSPLINE file is malformed."""


@dataclass
class FitConfig:
    order: int = 3
    t_min: float = 2.0
    t_max: float = 4.0
    t_step: float = 0.5
    min_count: int = 10
    jump_constraint: bool = True
    jump_iterations: int = 1
    sv_cutoff: float = 1e-10
    lambda_range: tuple = (1e-4, 1e6)
    piece_acceptance: bool = False

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("order must be >= 0")
        if not self.t_min <= self.t_max:
            raise ValueError("t_min must not exceed t_max")
        if not 0.0 < self.sv_cutoff < 1.0:
            raise ValueError("sv_cutoff must lie in (0, 1)")
        if self.t_step <= 0:
            raise ValueError("t_step must be positive")

    def thresholds(self):
        ts = list(np.arange(self.t_min, self.t_max, self.t_step))
        if not ts or ts[-1] < self.t_max:
            ts.append(self.t_max)
        return [float(t) for t in ts]


@dataclass(frozen=True)
class BoundaryCondition:
    """Fix the ``derivative``-th derivative of the spline at one domain end."""

    side: str
    derivative: int
    value: float = 0.0

    def __post_init__(self):
        if self.side not in ("lo", "hi"):
            raise ValueError("side must be 'lo' or 'hi'")
        if self.derivative < 0:
            raise ValueError("derivative must be >= 0")


@dataclass(frozen=True)
class LevelCheck:
    n: int
    n_inside: int
    n_tilde: int
    chi2_over_n: float
    limit: float

    @property
    def margin(self) -> float:
        return self.limit - self.chi2_over_n

    @property
    def passed(self) -> bool:
        return self.n_tilde == 0 or self.chi2_over_n <= self.limit


@dataclass
class FitDiagnostics:
    levels: list
    accepted_threshold: float
    pieces: int
    accepted: bool
    constraint_lambda: float = 0.0
    rank: int = 0
    n_free: int = 0
    objective: float = 0.0
    history: list = field(default_factory=list)

    def level_table(self):
        return [(c.n, c.n_tilde, c.chi2_over_n) for c in self.levels]


def acceptance_limit(T: float, n_tilde) -> float:
    return 1.0 + T * np.sqrt(2.0 / np.asarray(n_tilde, dtype=float))


# --- basis ------------------------------------------------------------------

def power_diff(lo, hi, k):
    """``hi**(k+1) - lo**(k+1)`` without cancellation for close ``lo``, ``hi``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    acc = np.zeros(np.broadcast(lo, hi).shape)
    for i in range(k + 1):
        acc = acc + hi**i * lo ** (k - i)
    return (hi - lo) * acc


def bin_moments(lo, hi, m: int):
    """``X_k = (hi**(k+1) - lo**(k+1)) / (k+1)`` for ``k = 0..m``; last axis is k."""
    return np.stack([power_diff(lo, hi, k) / (k + 1) for k in range(m + 1)], axis=-1)


def spline_basis(breakpoints, order: int):
    """Local-coordinate parameter map for the truncated-power spline.

    Returns ``(param_map, centers, halfwidths)`` with ``param_map`` of shape
    ``(n_pieces, order + 1, n_pieces + order)``.
    """
    t = np.asarray(breakpoints, dtype=float)
    m = order
    n_p = t.size - 1
    n_free = n_p + m
    x_c = 0.5 * (t[0] + t[-1])
    H = 0.5 * (t[-1] - t[0])
    s_knots = (t[1:-1] - x_c) / H
    centers = 0.5 * (t[:-1] + t[1:])
    halfwidths = 0.5 * (t[1:] - t[:-1])
    k = np.arange(m + 1)
    # s-polynomial coefficients of (s - s_i)**m
    trunc = comb(m, k)[None, :] * (-s_knots[:, None]) ** (m - k)[None, :]
    pmap = np.zeros((n_p, m + 1, n_free))
    for j in range(n_p):
        Q = np.zeros((m + 1, n_free))
        Q[:, : m + 1] = np.eye(m + 1)
        if j:
            Q[:, m + 1 : m + 1 + j] = trunc[:j].T
        sigma = (centers[j] - x_c) / H
        r = halfwidths[j] / H
        S = np.zeros((m + 1, m + 1))
        for l in range(m + 1):
            for kk in range(l, m + 1):
                S[l, kk] = comb(kk, l) * sigma ** (kk - l) * r**l
        pmap[j] = S @ Q
    return pmap, centers, halfwidths


# --- model ------------------------------------------------------------------

@dataclass
class SplineModel:
    order: int
    breakpoints: np.ndarray
    params: np.ndarray
    free_cov: np.ndarray
    param_map: np.ndarray
    boundary: tuple = ()
    # F with free_cov = F @ F.T; keeps pointwise variances accurate when free_cov is ill-conditioned
    cov_factor: np.ndarray | None = None

    def __post_init__(self):
        self.breakpoints = np.asarray(self.breakpoints, dtype=float)
        self.params = np.asarray(self.params, dtype=float)
        self.free_cov = np.asarray(self.free_cov, dtype=float)
        self.param_map = np.asarray(self.param_map, dtype=float)
        if self.cov_factor is not None:
            self.cov_factor = np.asarray(self.cov_factor, dtype=float).reshape(self.params.size, -1)
        self.centers = 0.5 * (self.breakpoints[:-1] + self.breakpoints[1:])
        self.halfwidths = 0.5 * (self.breakpoints[1:] - self.breakpoints[:-1])

    @property
    def n_pieces(self) -> int:
        return self.breakpoints.size - 1

    @property
    def n_free(self) -> int:
        return self.params.size

    @property
    def domain(self):
        return float(self.breakpoints[0]), float(self.breakpoints[-1])

    @property
    def piece_coeffs(self) -> np.ndarray:
        return self.param_map @ self.params

    def piece_cov(self, j: int) -> np.ndarray:
        P = self.param_map[j]
        if self.cov_factor is not None:
            G = P @ self.cov_factor
            return G @ G.T
        return P @ self.free_cov @ P.T

    def locate(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.domain
        if np.any((x < lo) | (x > hi)) or np.any(np.isnan(x)):
            raise ValueError(f"x outside the spline domain [{lo}, {hi}]")
        j = np.searchsorted(self.breakpoints, x, side="right") - 1
        return np.clip(j, 0, self.n_pieces - 1)

    def local(self, x, j):
        return (np.asarray(x, dtype=float) - self.centers[j]) / self.halfwidths[j]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        j = self.locate(x)
        u = self.local(x, j)
        coeffs = self.piece_coeffs[j]
        powers = u[..., None] ** np.arange(self.order + 1)
        return np.sum(coeffs * powers, axis=-1)

    def derivative(self, x, k: int = 1, piece=None):
        """k-th derivative at x; ``piece`` forces evaluation with one piece."""
        x = np.asarray(x, dtype=float)
        j = self.locate(x) if piece is None else np.full(x.shape, piece)
        u = self.local(x, j)
        coeffs = self.piece_coeffs[j]
        out = np.zeros(x.shape)
        for l in range(k, self.order + 1):
            out = out + coeffs[..., l] * (factorial(l) / factorial(l - k)) * u ** (l - k)
        return out / self.halfwidths[j] ** k

    def integral_rows(self, lo, hi):
        """Rows mapping the free parameters to the integrals over ``[lo, hi]``."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        rows = np.zeros((lo.size, self.n_free))
        t = self.breakpoints
        for j in range(self.n_pieces):
            a = np.maximum(lo, t[j])
            b = np.minimum(hi, t[j + 1])
            hit = b > a
            if not np.any(hit):
                continue
            ua = (a[hit] - self.centers[j]) / self.halfwidths[j]
            ub = (b[hit] - self.centers[j]) / self.halfwidths[j]
            mom = bin_moments(ua, ub, self.order) * self.halfwidths[j]
            rows[hit] += mom @ self.param_map[j]
        return rows

    def integrate(self, lo, hi):
        return self.integral_rows(lo, hi) @ self.params

    def variance(self, x, with_scale=False):
        """Pointwise variance of the spline value from the free-parameter covariance.

        With ``with_scale`` also returns ``sum |g_p| |C_pq| |g_q|``, the size
        of the terms that cancel in the quadratic form.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        j = self.locate(x)
        u = self.local(x, j)
        powers = u[:, None] ** np.arange(self.order + 1)
        grad = np.einsum("ik,ikp->ip", powers, self.param_map[j])
        if self.cov_factor is not None:
            gf = grad @ self.cov_factor
            var = np.sum(gf * gf, axis=1)
            return (var, np.zeros_like(var)) if with_scale else var
        var = np.einsum("ip,pq,iq->i", grad, self.free_cov, grad)
        if not with_scale:
            return var
        g = np.abs(grad)
        return var, np.einsum("ip,pq,iq->i", g, np.abs(self.free_cov), g)

    def jump_rows(self):
        """Rows giving the jump of the m-th derivative (over m!) at each knot."""
        m = self.order
        scaled = self.param_map[:, m, :] / self.halfwidths[:, None] ** m
        return scaled[1:] - scaled[:-1]

    def jumps(self):
        return self.jump_rows() @ self.params

    def to_power_basis(self, j: int) -> np.ndarray:
        """Piece ``j`` coefficients in powers of the raw coordinate ``x``."""
        c, h = self.centers[j], self.halfwidths[j]
        a = self.piece_coeffs[j]
        # u = (x - c)/h -> expand a_l ((x - c)/h)**l
        out = np.zeros(self.order + 1)
        for l in range(self.order + 1):
            for k in range(l + 1):
                out[k] += a[l] * comb(l, k) * (-c) ** (l - k) / h**l
        return out


# --- least squares ------------------------------------------------------------

def solve_constrained(A, b, E=None, e=None, cutoff=1e-10, return_factor=False):
    """Least squares ``min |A p - b|`` subject to ``E p = e`` via SVD.

    Equality constraints are eliminated through the null space of ``E``;
    columns are normalized before the SVD and singular values below
    ``cutoff`` times the largest are discarded.

    Returns ``(p, cov, rank, n_reduced)`` where ``cov`` is the pseudo-inverse
    of the normal matrix mapped back to the full parameter space.  With
    ``return_factor`` a factor ``F`` with ``cov = F @ F.T`` is appended.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[1]
    if E is not None and len(E):
        E = np.atleast_2d(E)
        Ue, se, Vte = np.linalg.svd(E)
        r = int(np.count_nonzero(se > cutoff * se[0]))
        p0 = Vte[:r].T @ ((Ue[:, :r].T @ e) / se[:r])
        Z = Vte[r:].T
    else:
        p0 = np.zeros(n)
        Z = np.eye(n)
    n_red = Z.shape[1]
    if n_red == 0:
        out = (p0, np.zeros((n, n)), 0, 0)
        return out + (np.zeros((n, 0)),) if return_factor else out
    Ar = A @ Z
    br = b - A @ p0
    norms = np.sqrt(np.sum(Ar * Ar, axis=0))
    norms[norms == 0] = 1.0
    U, s, Vt = np.linalg.svd(Ar / norms, full_matrices=False)
    keep = s > cutoff * s[0] if s.size and s[0] > 0 else np.zeros(s.shape, bool)
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    q = (Vt.T @ (inv * (U.T @ br))) / norms
    F = Z @ ((Vt.T * inv) / norms[:, None])
    p = p0 + Z @ q
    cov = F @ F.T
    out = (p, cov, int(np.count_nonzero(keep)), n_red)
    return out + (F,) if return_factor else out


def _boundary_rows(model: SplineModel, boundary):
    rows, vals = [], []
    lo, hi = model.domain
    m = model.order
    for bc in boundary:
        j = 0 if bc.side == "lo" else model.n_pieces - 1
        u = -1.0 if bc.side == "lo" else 1.0
        k = bc.derivative
        vec = np.zeros(m + 1)
        for l in range(k, m + 1):
            vec[l] = factorial(l) / factorial(l - k) * u ** (l - k)
        vec /= model.halfwidths[j] ** k
        rows.append(vec @ model.param_map[j])
        vals.append(bc.value)
    return np.array(rows).reshape(len(rows), model.n_free), np.array(vals, dtype=float)


class DivisionProblem:
    """Design matrix of one interval division against a hierarchy."""

    def __init__(self, h: BinHierarchy, breakpoints, order: int, boundary=(), cutoff=1e-10):
        self.h = h
        self.order = order
        self.boundary = tuple(boundary)
        self.cutoff = cutoff
        pmap, _, _ = spline_basis(breakpoints, order)
        n_free = pmap.shape[2]
        self.template = SplineModel(order, breakpoints, np.zeros(n_free), np.zeros((n_free, n_free)), pmap,
                                    self.boundary)
        self.rows = self.template.integral_rows(h.lo, h.hi)
        self.fit_mask = h.usable & (h.error > 0)
        self.exact_mask = h.usable & (h.error == 0)
        w = np.sqrt(h.weight[self.fit_mask]) / h.error[self.fit_mask]
        self.A = self.rows[self.fit_mask] * w[:, None]
        self.b = h.value[self.fit_mask] * w
        E = [self.rows[self.exact_mask]]
        e = [h.value[self.exact_mask]]
        if self.boundary:
            Eb, eb = _boundary_rows(self.template, self.boundary)
            E.append(Eb)
            e.append(eb)
        self.E = np.vstack(E)
        self.e = np.concatenate(e)

    @property
    def n_free(self) -> int:
        return self.template.n_free

    def solve(self, extra_rows=None):
        A = self.A
        b = self.b
        if extra_rows is not None and len(extra_rows):
            A = np.vstack([A, extra_rows])
            b = np.concatenate([b, np.zeros(len(extra_rows))])
        n_eq = np.linalg.matrix_rank(self.E) if len(self.E) else 0
        if self.A.shape[0] < self.n_free - n_eq:
            raise FitError(
                f"{self.A.shape[0]} usable rows cannot determine {self.n_free - n_eq} free parameters"
            )
        p, cov, rank, n_red, F = solve_constrained(A, b, self.E, self.e, self.cutoff, return_factor=True)
        model = replace(self.template, params=p, free_cov=cov, cov_factor=F)
        return model, rank, n_red

    def chi(self, model: SplineModel):
        """Per-bin normalized residuals; NaN where the bin does not enter a chi-square."""
        pred = self.rows @ model.params
        out = np.full(len(self.h), np.nan)
        out[self.fit_mask] = (self.h.value[self.fit_mask] - pred[self.fit_mask]) / self.h.error[self.fit_mask]
        return out


def model_chi(h: BinHierarchy, model: SplineModel):
    fit_mask = h.usable & (h.error > 0)
    out = np.full(len(h), np.nan)
    pred = model.integrate(h.lo[fit_mask], h.hi[fit_mask])
    out[fit_mask] = (h.value[fit_mask] - pred) / h.error[fit_mask]
    return out


# --- goodness -----------------------------------------------------------------

def level_checks(h: BinHierarchy, chi, T: float, mask=None, early_stop=False):
    """Per-level reduced chi-square over the bins selected by ``mask``.

    With ``early_stop`` the scan ends at the first level where more than half
    of the selected bins are unusable; that level is not checked.
    """
    sel = np.ones(len(h), bool) if mask is None else mask
    out = []
    for n in np.unique(h.level[sel]):
        at = sel & (h.level == n)
        n_inside = int(np.count_nonzero(at))
        n_usable = int(np.count_nonzero(at & h.usable))
        if early_stop and (n_inside - n_usable) * 2 > n_inside:
            break
        rows = at & ~np.isnan(chi)
        n_tilde = int(np.count_nonzero(rows))
        if n_tilde == 0:
            out.append(LevelCheck(int(n), n_inside, 0, 0.0, math.inf))
            continue
        c2 = float(np.sum(chi[rows] ** 2)) / n_tilde
        out.append(LevelCheck(int(n), n_inside, n_tilde, c2, float(acceptance_limit(T, n_tilde))))
    return out


def _interval_mask(h, lo, hi):
    return (h.lo >= lo) & (h.hi <= hi)


def goodness_on_interval(h: BinHierarchy, model: SplineModel, lo: float, hi: float, T: float, chi=None):
    """Check the fit on ``[lo, hi]`` level by level.

    Returns ``(passed, checks)``; an interval with no checkable level passes.
    """
    if chi is None:
        chi = model_chi(h, model)
    checks = level_checks(h, chi, T, _interval_mask(h, lo, hi), early_stop=True)
    return all(c.passed for c in checks), checks


def full_checks(h, chi, T):
    return level_checks(h, chi, T)


def _division_passes(h, model, chi, T):
    full = full_checks(h, chi, T)
    ok_full = all(c.passed for c in full)
    t = model.breakpoints
    pieces = [goodness_on_interval(h, model, t[j], t[j + 1], T, chi=chi) for j in range(model.n_pieces)]
    return ok_full, full, pieces


def _acceptable(cfg, ok_full, pieces):
    if cfg.piece_acceptance:
        return ok_full and all(p for p, _ in pieces)
    return ok_full


def objective(h: BinHierarchy, model: SplineModel) -> float:
    """Sum over levels of chi2_n / 2**n (the fitted objective)."""
    chi = model_chi(h, model)
    ok = ~np.isnan(chi)
    return float(np.sum(h.weight[ok] * chi[ok] ** 2))


# --- fitting ----------------------------------------------------------------

def _diagnostics(h, model, chi, T, accepted, rank, n_free, lam=0.0, history=None):
    return FitDiagnostics(
        levels=full_checks(h, chi, T),
        accepted_threshold=T,
        pieces=model.n_pieces,
        accepted=accepted,
        constraint_lambda=lam,
        rank=rank,
        n_free=n_free,
        objective=float(np.nansum(h.weight * chi**2)),
        history=history or [],
    )


def _check_breakpoints(h, breakpoints):
    t = np.asarray(breakpoints, dtype=float)
    lo, hi = h.domain
    if t.size < 2 or t[0] != lo or t[-1] != hi or np.any(np.diff(t) <= 0):
        raise ValueError("breakpoints must increase strictly and span the domain")
    if not np.all(np.isin(t, h.edges)):
        raise ValueError("breakpoints must coincide with elementary bin edges")
    return t


def fit_division(h: BinHierarchy, breakpoints, cfg: FitConfig | None = None, boundary=(), T=None):
    """Least-squares spline on a fixed division; no acceptance decision beyond reporting."""
    cfg = cfg or FitConfig()
    if not np.any(h.usable):
        raise FitError("no usable bins in the hierarchy")
    t = _check_breakpoints(h, breakpoints)
    prob = DivisionProblem(h, t, cfg.order, boundary, cfg.sv_cutoff)
    model, rank, n_red = prob.solve()
    chi = prob.chi(model)
    T = cfg.t_min if T is None else T
    full = full_checks(h, chi, T)
    diag = _diagnostics(h, model, chi, T, all(c.passed for c in full), rank, n_red)
    return model, diag


def _split_point(edges, e0, e1, order):
    """Edge index nearest the middle of ``[edges[e0], edges[e1]]`` or None."""
    if e1 - e0 < 2:
        return None
    mid = 0.5 * (edges[e0] + edges[e1])
    inner = np.arange(e0 + 1, e1)
    k = int(inner[np.argmin(np.abs(edges[inner] - mid))])
    if k - e0 > order + 1 and e1 - k > order + 1:
        return k
    return None


def adaptive_fit(h: BinHierarchy, cfg: FitConfig | None = None, boundary=()):
    """Fit with the fewest pieces whose per-level goodness is acceptable.

    Pieces failing their own check are halved at the elementary edge nearest
    their midpoint.  When nothing can be split the threshold is raised through
    ``cfg.thresholds()`` and the search starts again from a single piece.
    On acceptance the optional jump constraint is applied.
    """
    cfg = cfg or FitConfig()
    if not np.any(h.usable):
        raise FitError("no usable bins in the hierarchy")
    edges = h.edges
    history = []
    cache = {}

    def fit_cuts(cuts):
        key = tuple(cuts)
        if key not in cache:
            prob = DivisionProblem(h, edges[cuts], cfg.order, boundary, cfg.sv_cutoff)
            model, rank, n_red = prob.solve()
            cache[key] = (prob, model, rank, n_red, prob.chi(model))
        return cache[key]

    last = None
    for T in cfg.thresholds():
        cuts = [0, edges.size - 1]
        while True:
            prob, model, rank, n_red, chi = fit_cuts(cuts)
            ok_full, full, pieces = _division_passes(h, model, chi, T)
            ok = _acceptable(cfg, ok_full, pieces)
            history.append((T, model.n_pieces, ok))
            last = (T, prob, model, rank, n_red, chi)
            if ok:
                diag = _diagnostics(h, model, chi, T, True, rank, n_red, history=history)
                if cfg.jump_constraint and model.n_pieces > 1:
                    model, diag = _constrain(prob, model, chi, T, cfg, history)
                return model, diag
            if len(cuts) == 2:
                failing = [0]
            else:
                failing = [j for j, (p, _) in enumerate(pieces) if not p]
            new = list(cuts)
            for j in failing:
                k = _split_point(edges, cuts[j], cuts[j + 1], cfg.order)
                if k is not None:
                    new.append(k)
            if len(new) == len(cuts):
                break
            cuts = sorted(new)
    T, prob, model, rank, n_red, chi = last
    return model, _diagnostics(h, model, chi, T, False, rank, n_red, history=history)


# --- jump constraint ----------------------------------------------------------

def knot_weights(h, model, chi, T):
    """Per-knot weights: smallest acceptance margin on the neighbouring pieces."""
    t = model.breakpoints
    n_p = model.n_pieces
    margins = []
    for j in range(n_p):
        _, checks = goodness_on_interval(h, model, t[j], t[j + 1], T, chi=chi)
        vals = [c.margin for c in checks if c.n_tilde > 0]
        margins.append(min(vals) if vals else 0.0)
    lam = np.zeros(n_p - 1)
    for j in range(n_p - 1):
        # knot j sits between pieces j and j+1
        near = range(max(j - 1, 0), min(j + 2, n_p - 1) + 1)
        lam[j] = max(0.0, min(margins[i] for i in near))
    return lam


def _penalty_rows(model, ref_jumps, lam_j, lam):
    G = model.jump_rows()
    keep = (ref_jumps != 0) & (lam_j > 0)
    scale = np.zeros_like(ref_jumps)
    scale[keep] = np.sqrt(lam * lam_j[keep] / model.n_pieces) / ref_jumps[keep]
    return (G * scale[:, None])[keep]


def _constrain(prob, model, chi, T, cfg, history):
    h = prob.h
    lam_j = knot_weights(h, model, chi, T)
    if not np.any(lam_j > 0):
        _, rank, n_red = prob.solve()
        return model, _diagnostics(h, model, chi, T, True, rank, n_red, history=history)

    def attempt(lam, ref):
        rows = _penalty_rows(model, ref, lam_j, lam)
        cand, rank, n_red = prob.solve(rows)
        c = prob.chi(cand)
        ok_full, _, pieces = _division_passes(h, cand, c, T)
        return _acceptable(cfg, ok_full, pieces), cand, c, rank, n_red

    ref = model.jumps()
    best = None
    lam_lo, lam_hi = cfg.lambda_range
    for _ in range(max(1, cfg.jump_iterations)):
        ok, *res = attempt(lam_hi, ref)
        if ok:
            best = (lam_hi, *res)
        else:
            ok_lo, *res_lo = attempt(lam_lo, ref)
            if not ok_lo:
                break
            best = (lam_lo, *res_lo)
            a, b = math.log(lam_lo), math.log(lam_hi)
            for _ in range(40):
                if b - a < 1e-3:
                    break
                c = 0.5 * (a + b)
                ok_c, *res_c = attempt(math.exp(c), ref)
                if ok_c:
                    a = c
                    best = (math.exp(c), *res_c)
                else:
                    b = c
        ref = best[1].jumps()
    if best is None:
        _, rank, n_red = prob.solve()
        return model, _diagnostics(h, model, chi, T, True, rank, n_red, history=history)
    lam, cand, c, rank, n_red = best
    return cand, _diagnostics(h, cand, c, T, True, rank, n_red, lam=lam, history=history)


def constrain_jumps(h: BinHierarchy, model: SplineModel, cfg: FitConfig | None = None, T=None):
    """Shrink jumps of the highest derivative as far as the level thresholds allow.

    ``model`` must be the unconstrained least-squares fit on its division.
    Returns ``(model, diagnostics)``; the input model comes back unchanged
    when it has a single piece or every knot weight is zero.
    """
    cfg = cfg or FitConfig()
    T = cfg.t_min if T is None else T
    prob = DivisionProblem(h, model.breakpoints, model.order, model.boundary, cfg.sv_cutoff)
    chi = prob.chi(model)
    if model.n_pieces == 1:
        _, rank, n_red = prob.solve()
        ok = all(c.passed for c in full_checks(h, chi, T))
        return model, _diagnostics(h, model, chi, T, ok, rank, n_red)
    return _constrain(prob, model, chi, T, cfg, [])


# --- BHMSPLINE v1 ---------------------------------------------------------------

def spline_to_dict(model: SplineModel, diag: FitDiagnostics | None = None) -> dict:
    pieces = []
    coeffs = model.piece_coeffs
    for j in range(model.n_pieces):
        pieces.append({
            "lo": float(model.breakpoints[j]),
            "hi": float(model.breakpoints[j + 1]),
            "coefficients": [float(c) for c in coeffs[j]],
            "covariance": model.piece_cov(j).tolist(),
        })
    out = {
        "format": "BHMSPLINE",
        "version": 1,
        "order": model.order,
        "domain": list(model.domain),
        "accepted": bool(diag.accepted) if diag else None,
        "threshold_used": diag.accepted_threshold if diag else None,
        "constraint_lambda": diag.constraint_lambda if diag else 0.0,
        "pieces": pieces,
        "levels": [
            {"n": c.n, "n_tilde": c.n_tilde, "chi2_over_n": c.chi2_over_n} for c in (diag.levels if diag else [])
        ],
        "free_parameters": model.params.tolist(),
        "free_covariance": model.free_cov.tolist(),
        "covariance_factor": None if model.cov_factor is None else model.cov_factor.tolist(),
        "param_map": model.param_map.tolist(),
        "boundary": [[bc.side, bc.derivative, bc.value] for bc in model.boundary],
    }
    return out


def spline_from_dict(d: dict) -> SplineModel:
    if d.get("format") != "BHMSPLINE" or d.get("version") != 1:
        raise SplineFormatError("not a BHMSPLINE v1 document")
    order = int(d["order"])
    pieces = d["pieces"]
    breaks = [p["lo"] for p in pieces] + [pieces[-1]["hi"]]
    boundary = tuple(BoundaryCondition(s, int(k), float(v)) for s, k, v in d.get("boundary", []))
    if "param_map" in d:
        F = d.get("covariance_factor")
        return SplineModel(order, breaks, d["free_parameters"], d["free_covariance"], d["param_map"], boundary,
                           cov_factor=F)
    # block form: each piece owns its local coefficients
    n_p = len(pieces)
    size = n_p * (order + 1)
    pmap = np.zeros((n_p, order + 1, size))
    cov = np.zeros((size, size))
    params = np.zeros(size)
    for j, p in enumerate(pieces):
        sl = slice(j * (order + 1), (j + 1) * (order + 1))
        pmap[j][:, sl] = np.eye(order + 1)
        params[sl] = p["coefficients"]
        cov[sl, sl] = p["covariance"]
    return SplineModel(order, breaks, params, cov, pmap, boundary)


def write_spline(model: SplineModel, path, diag: FitDiagnostics | None = None) -> None:
    Path(path).write_text(json.dumps(spline_to_dict(model, diag), indent=1) + "\n")


def read_spline(path):
    """Read a BHMSPLINE file; returns ``(model, metadata_dict)``."""
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SplineFormatError(f"{path}: {exc}") from exc
    return spline_from_dict(d), d
