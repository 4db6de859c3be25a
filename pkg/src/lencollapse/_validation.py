"""Input validation helpers shared by the estimators and free functions."""

import numbers

import numpy as np
from sklearn.utils import check_array


def check_signal(z, name="signal"):
    """Return ``z`` as a finite 1-D float array with at least one entry."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {z.shape}")
    if z.size == 0:
        raise ValueError(f"{name} must have at least one entry")
    if not np.all(np.isfinite(z)):
        raise ValueError(f"{name} contains non-finite entries")
    return z


def check_features(x, name="X"):
    """Return ``x`` as a finite 2-D float array. 1-D input is one column."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return check_array(x, ensure_all_finite=True, input_name=name, dtype=float)


def check_matrix(m, name="matrix"):
    """Finite 2-D matrix; unlike :func:`check_features` empty shapes are allowed."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def check_row_stochastic(a, atol=1e-10, name="A"):
    a = check_matrix(a, name)
    if a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty square matrix, got {a.shape}")
    if np.any(a < 0):
        raise ValueError(f"{name} has negative entries")
    if np.max(np.abs(a.sum(axis=1) - 1.0)) > atol:
        raise ValueError(f"rows of {name} do not sum to 1 within {atol}")
    return a


def check_tau(tau):
    if not isinstance(tau, numbers.Real) or not (0.0 < tau <= 1.0):
        raise ValueError(f"tau must lie in (0, 1], got {tau!r}")
    return float(tau)


def check_count(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)
