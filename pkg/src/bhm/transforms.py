"""Variable changes for semi-infinite domains and weights for known divergences.

A sample at ``x`` is recorded at ``y(x)`` in ``[0, 1)`` with its value
multiplied by ``x**p`` (taming an ``x**-p`` divergence at the left edge).
The Jacobian ``1/x'(y)`` converting a density in ``x`` into one in ``y`` is
applied either to every sampled value (``measure="sample"``, the default) or
to the fitted spline afterwards (``measure="restore"``).  Applying it at
sampling time keeps the recorded values bounded when ``x**p`` grows at
large ``x``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

KINDS = ("identity", "arctan", "exp")


@dataclass(frozen=True)
class Transform:
    kind: str = "identity"
    weight_power: float = 0.0
    measure: str = "sample"
    # optional user map: y(x), x(y), x'(y); not validated beyond monotonicity at use
    custom: tuple[Callable, Callable, Callable] | None = None

    def __post_init__(self):
        if self.custom is None and self.kind not in KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}; expected one of {KINDS}")
        if self.weight_power < 0:
            raise ValueError("weight_power must be >= 0")
        if self.measure not in ("sample", "restore"):
            raise ValueError("measure must be 'sample' or 'restore'")

    @property
    def maps_domain(self) -> bool:
        return self.custom is not None or self.kind != "identity"

    def y(self, x):
        x = np.asarray(x, dtype=float)
        if self.custom is not None:
            return self.custom[0](x)
        if self.kind == "identity":
            return x
        if np.any(x < 0):
            raise ValueError("semi-infinite transforms need x >= 0")
        if self.kind == "arctan":
            return 2.0 * np.arctan(x) / np.pi
        return -np.expm1(-x)

    def x(self, y):
        y = np.asarray(y, dtype=float)
        if self.custom is not None:
            return self.custom[1](y)
        if self.kind == "identity":
            return y
        _check_unit(y)
        if self.kind == "arctan":
            return np.tan(0.5 * np.pi * y)
        return -np.log1p(-y)

    def x_prime(self, y):
        """dx/dy."""
        y = np.asarray(y, dtype=float)
        if self.custom is not None:
            return self.custom[2](y)
        if self.kind == "identity":
            return np.ones_like(y)
        _check_unit(y)
        if self.kind == "arctan":
            return 0.5 * np.pi / np.cos(0.5 * np.pi * y) ** 2
        return 1.0 / (1.0 - y)

    def dy_dx(self, x):
        """Jacobian ``dy/dx = 1/x'(y(x))`` evaluated directly in ``x``."""
        x = np.asarray(x, dtype=float)
        if self.custom is not None:
            return 1.0 / self.custom[2](self.custom[0](x))
        if self.kind == "identity":
            return np.ones_like(x)
        if self.kind == "arctan":
            return 2.0 / (np.pi * (1.0 + x * x))
        return np.exp(-x)

    def weight(self, x):
        x = np.asarray(x, dtype=float)
        if self.weight_power == 0:
            return np.ones_like(x)
        if np.any(x < 0):
            raise ValueError("divergence weights need x >= 0")
        return x**self.weight_power


def _check_unit(y):
    if np.any(y >= 1.0):
        raise ValueError("y -> 1 maps to x -> infinity; the scale factor diverges there")
    if np.any(y < 0.0):
        raise ValueError("y must lie in [0, 1)")


def forward(t: Transform, x):
    """``(y, w)``: transformed position and divergence weight ``x**p``."""
    return t.y(x), t.weight(x)


def inverse_scale(t: Transform, y):
    """``1/x'(y)``, the factor turning an x-density into a y-density."""
    return 1.0 / t.x_prime(y)


def sample_weight(t: Transform, x):
    """Total factor multiplied into a value sampled at ``x`` before recording."""
    w = t.weight(x)
    if t.measure == "sample" and t.maps_domain:
        w = w * t.dy_dx(x)
    return w


def restore_factor(t: Transform, x):
    """Positive divisor taking the y-space spline back to the x-space function."""
    x = np.asarray(x, dtype=float)
    f = t.weight(x)
    if t.measure == "restore" and t.maps_domain:
        f = f / t.dy_dx(x)
    return f


def restore(t: Transform, model, x):
    """Original-coordinate function value ``spline(y(x)) / factor(x)``."""
    x = np.asarray(x, dtype=float)
    if t.weight_power > 0 and np.any(x == 0):
        raise ValueError("cannot restore at x = 0 with a divergence weight")
    return model(t.y(x)) / restore_factor(t, x)


def restore_sigma(t: Transform, sigma_y, x):
    return np.asarray(sigma_y) / restore_factor(t, x)


def parse(kind: str | None, weight_power: float = 0.0, measure: str = "sample") -> Transform:
    """CLI helper: ``none`` is an alias for identity."""
    if kind in (None, "none"):
        kind = "identity"
    return Transform(kind, float(weight_power), measure)


def truth_in_y(t: Transform, f, y):
    """What the y-space spline should reproduce for an x-density ``f``."""
    y = np.asarray(y, dtype=float)
    x = t.x(y)
    g = f(x) * t.weight(x)
    if t.measure == "restore" and t.maps_domain:
        g = g * t.x_prime(y)
    return g


__all__ = [
    "Transform", "forward", "inverse_scale", "sample_weight", "restore", "restore_factor",
    "restore_sigma", "parse", "truth_in_y",
]
