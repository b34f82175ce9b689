"""Input validation helpers.

Every public entry point funnels array-like inputs through these checks so
that malformed probability data fails loudly, with the offending name in the
message, instead of propagating NaNs.
"""

from __future__ import annotations

import numpy as np

from .exceptions import InvalidParameterError

MASS_ATOL = 1e-12


def as_float_array(x, name: str, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidParameterError(f"{name} must have {ndim} dimensions, got {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError(f"{name} contains non-finite entries")
    return arr


def check_probability_vector(
    v, name: str, d: int | None = None, strictly_positive: bool = False, atol: float = MASS_ATOL
) -> np.ndarray:
    v = as_float_array(v, name, ndim=1)
    if d is not None and v.shape[0] != d:
        raise InvalidParameterError(f"{name} must have length {d}, got {v.shape[0]}")
    if np.any(v < 0):
        raise InvalidParameterError(f"{name} has negative entries")
    if strictly_positive and np.any(v <= 0):
        raise InvalidParameterError(f"{name} must be strictly positive")
    total = float(v.sum())
    if abs(total - 1.0) > atol:
        raise InvalidParameterError(f"{name} must sum to 1, got {total!r}")
    return v


def check_joint_matrix(p, name: str, shape=None, atol: float = MASS_ATOL) -> np.ndarray:
    """A non-negative matrix with total mass 1 (a coupling)."""
    p = as_float_array(p, name, ndim=2)
    if shape is not None and p.shape != tuple(shape):
        raise InvalidParameterError(f"{name} must have shape {tuple(shape)}, got {p.shape}")
    if np.any(p < 0):
        raise InvalidParameterError(f"{name} has negative entries")
    total = float(p.sum())
    if abs(total - 1.0) > atol:
        raise InvalidParameterError(f"{name} must have total mass 1, got {total!r}")
    return p


def check_row_stochastic(k, name: str, atol: float = MASS_ATOL) -> np.ndarray:
    k = as_float_array(k, name, ndim=2)
    if np.any(k < -atol) or np.any(k > 1 + atol):
        raise InvalidParameterError(f"{name} has entries outside [0, 1]")
    rows = k.sum(axis=1)
    if np.max(np.abs(rows - 1.0)) > atol:
        raise InvalidParameterError(f"{name} rows must sum to 1 (max deviation {np.max(np.abs(rows - 1.0))!r})")
    return k


def check_state_index(x, d: int, name: str) -> int:
    x = int(x)
    if not 0 <= x < d:
        raise InvalidParameterError(f"{name} must be a state index in [0, {d}), got {x}")
    return x
