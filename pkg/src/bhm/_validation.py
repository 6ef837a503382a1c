"""Input checks shared by the estimator API."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_positions(X) -> np.ndarray:
    """Sample positions as a finite 1-d float array; accepts shape (n,) or (n, 1)."""
    X = check_array(X, ensure_2d=False, dtype=np.float64, ensure_all_finite=True, ensure_min_samples=0)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"expected a single feature column, got {X.shape[1]}")
        X = X[:, 0]
    return X


def check_values(v, n: int) -> np.ndarray:
    """Sampled values aligned with ``n`` positions; ``None`` means all ones."""
    if v is None:
        return np.ones(n)
    v = check_array(v, ensure_2d=False, dtype=np.float64, ensure_all_finite=True, ensure_min_samples=0)
    if v.ndim != 1 or v.size != n:
        raise ValueError(f"expected {n} sampled values, got shape {v.shape}")
    return v


def check_domain(domain, X=None):
    if domain is None:
        if X is None or X.size == 0:
            raise ValueError("a domain is required when no samples are given")
        return float(X.min()), float(X.max())
    lo, hi = (float(d) for d in domain)
    if not lo < hi:
        raise ValueError("domain must satisfy lo < hi")
    return lo, hi
