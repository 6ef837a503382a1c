"""Bin hierarchy method: smooth functions reconstructed from sampled bin integrals."""
from .accum import Domain, SampleAccumulator, merge, new_accumulator, read_hist, weighted_merge, write_hist
from .errors import (ErrorBand, EvolutionTrace, bootstrap_error, covariance_error, evolution_error,
                     robust_error)
from .estimator import BinHierarchyDensity, DomainTransform, ZeroSignalError
from .hierarchy import BinHierarchy, build
from .splinefit import (BoundaryCondition, FitConfig, FitError, SplineModel, adaptive_fit, constrain_jumps,
                        fit_division, read_spline, write_spline)
from .transforms import Transform
from .zerocheck import Verdict, check_zero, evolution_accept

__version__ = "0.1.0"

__all__ = [
    "Domain", "SampleAccumulator", "merge", "new_accumulator", "read_hist", "weighted_merge", "write_hist",
    "ErrorBand", "EvolutionTrace", "bootstrap_error", "covariance_error", "evolution_error", "robust_error",
    "BinHierarchyDensity", "DomainTransform", "ZeroSignalError", "BinHierarchy", "build",
    "BoundaryCondition", "FitConfig", "FitError", "SplineModel", "adaptive_fit", "constrain_jumps",
    "fit_division", "read_spline", "write_spline", "Transform", "Verdict", "check_zero", "evolution_accept",
]
