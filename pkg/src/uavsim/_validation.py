"""Small input validation helpers shared by the estimators and pipelines."""

import math

import numpy as np
from sklearn.utils import check_array


def check_points(X, *, name="X", min_samples=1):
    """Return ``X`` as a finite float array of shape (n, 2)."""
    X = check_array(X, dtype=np.float64, ensure_min_samples=min_samples, input_name=name)
    if X.shape[1] != 2:
        raise ValueError(f"{name} must have exactly 2 columns (x, y), got {X.shape[1]}")
    return X


def check_sample_weight(sample_weight, n_samples):
    """Validate per-sample weights; ``None`` means unit weights."""
    if sample_weight is None:
        return np.ones(n_samples)
    w = np.asarray(sample_weight, dtype=np.float64).reshape(-1)
    if w.shape[0] != n_samples:
        raise ValueError(f"sample_weight has {w.shape[0]} entries, expected {n_samples}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("sample_weight must be finite and nonnegative")
    if not np.any(w > 0):
        raise ValueError("no positive weight in sample_weight")
    return w


def check_positive(value, name, *, allow_zero=False):
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    if allow_zero:
        if value < 0:
            raise ValueError(f"{name} must be >= 0, got {value}")
    elif value <= 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return value


def check_fraction(value, name):
    value = float(value)
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")
    return value
