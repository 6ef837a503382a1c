"""scikit-learn style front end to sampling, hierarchy building and spline fitting."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_domain, check_positions, check_values
from .accum import Domain, SampleAccumulator
from .errors import covariance_error
from .hierarchy import build
from .splinefit import FitConfig, adaptive_fit
from . import transforms as tr
from .transforms import Transform, restore, restore_factor
from .zerocheck import check_zero


class ZeroSignalError(RuntimeError):
    """The sampled data cannot be told apart from the zero function."""


class DomainTransform(TransformerMixin, BaseEstimator):
    """Map positions onto the fitting interval (``arctan`` or ``exp`` for ``[0, inf)``)."""

    def __init__(self, kind="identity", weight_power=0.0, measure="sample"):
        self.kind = kind
        self.weight_power = weight_power
        self.measure = measure

    def fit(self, X, y=None):
        self.transform_ = Transform(self.kind, float(self.weight_power), self.measure)
        return self

    def transform(self, X):
        check_is_fitted(self, "transform_")
        return self.transform_.y(check_positions(X))

    def inverse_transform(self, Y):
        check_is_fitted(self, "transform_")
        return self.transform_.x(check_positions(Y))

    def sample_weight(self, X):
        """Factor multiplied into the sampled values at ``X`` before recording."""
        check_is_fitted(self, "transform_")
        return tr.sample_weight(self.transform_, check_positions(X))


class BinHierarchyDensity(BaseEstimator):
    """Smooth spline estimate of a function from its importance-sampled points.

    ``fit(X, sample_weight=v)`` records positions ``X`` with sampled values
    ``v`` (all ones for plain density estimation; ``sign f`` for signed
    targets) and fits the spline.  ``predict`` returns the function
    normalized so that its integral equals the mean of ``v``.

    Parameters
    ----------
    levels : int
        The accumulator has ``2**levels`` elementary bins.
    domain : tuple, optional
        ``(lo, hi)`` in original coordinates; the data range when omitted.
        For semi-infinite transforms only ``lo`` matters.
    transform, weight_power, measure
        Passed to ``Transform``.
    require_signal : bool
        Raise ``ZeroSignalError`` when the data are consistent with zero.
    """

    def __init__(self, levels=10, domain=None, order=3, t_min=2.0, t_max=4.0, t_step=0.5, min_count=10,
                 jump_constraint=True, transform="identity", weight_power=0.0, measure="sample",
                 require_signal=False):
        self.levels = levels
        self.domain = domain
        self.order = order
        self.t_min = t_min
        self.t_max = t_max
        self.t_step = t_step
        self.min_count = min_count
        self.jump_constraint = jump_constraint
        self.transform = transform
        self.weight_power = weight_power
        self.measure = measure
        self.require_signal = require_signal

    def _config(self):
        return FitConfig(order=self.order, t_min=self.t_min, t_max=self.t_max, t_step=self.t_step,
                         min_count=self.min_count, jump_constraint=self.jump_constraint)

    def _transform(self):
        return Transform(self.transform, float(self.weight_power), self.measure)

    def _new_accumulator(self, X):
        t = self._transform()
        if t.maps_domain:
            lo = 0.0 if self.domain is None else float(self.domain[0])
            return SampleAccumulator(Domain(float(t.y(np.array(lo))), 1.0), self.levels)
        lo, hi = check_domain(self.domain, X)
        return SampleAccumulator(Domain(lo, hi), self.levels)

    def _record(self, acc, X, sample_weight):
        X = check_positions(X)
        v = check_values(sample_weight, X.size)
        t = self._transform()
        if X.size:
            acc.record_many(t.y(X), v * tr.sample_weight(t, X))
        return acc

    def fit(self, X, y=None, sample_weight=None):
        X = check_positions(X)
        acc = self._new_accumulator(X)
        return self.fit_accumulator(self._record(acc, X, sample_weight))

    def partial_fit(self, X, y=None, sample_weight=None):
        """Add samples to the existing accumulator and refit."""
        if not hasattr(self, "accumulator_"):
            return self.fit(X, y, sample_weight)
        return self.fit_accumulator(self._record(self.accumulator_, X, sample_weight))

    def fit_accumulator(self, acc: SampleAccumulator):
        """Fit directly from accumulated statistics (coordinates already transformed)."""
        self.accumulator_ = acc
        self.hierarchy_ = build(acc, self.min_count)
        self.zero_verdict_ = check_zero(self.hierarchy_)
        if self.require_signal and self.zero_verdict_.consistent_with_zero:
            raise ZeroSignalError("sampled data are consistent with zero; collect more samples")
        self.spline_, self.diagnostics_ = adaptive_fit(self.hierarchy_, self._config())
        self.n_pieces_ = self.spline_.n_pieces
        self.accepted_ = self.diagnostics_.accepted
        return self

    def predict(self, X, return_std=False):
        """Function value at ``X`` in original coordinates, optionally with the covariance error."""
        check_is_fitted(self, "spline_")
        X = check_positions(X)
        t = self._transform()
        value = restore(t, self.spline_, X)
        if not return_std:
            return value
        sigma = covariance_error(self.spline_, t.y(X)) / restore_factor(t, X)
        return value, np.atleast_1d(sigma)

    def check_zero(self):
        check_is_fitted(self, "zero_verdict_")
        return self.zero_verdict_
