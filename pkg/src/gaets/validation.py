"""Input validation helpers used by the estimator API and the core modules."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericError


def as_float_matrix(x, name: str = "X") -> np.ndarray:
    """Coerce ``x`` to a 2-D float64 array, rejecting non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericError(f"{name} contains NaN or Inf entries")
    return arr


def as_window_batch(x, input_horizon: int, n_vars: int, name: str = "X"):
    """Coerce ``x`` to a (batch, T, n_vars) float64 array.

    Accepts a single (T, n_vars) window or a batch of them; returns the
    batch together with a flag telling whether the input was unbatched.
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if arr.ndim != 3:
        raise DimensionError(f"{name} must be 2-D or 3-D, got shape {arr.shape}")
    if arr.shape[1] != input_horizon or arr.shape[2] != n_vars:
        raise DimensionError(
            f"{name} must have shape (batch, {input_horizon}, {n_vars}), "
            f"got {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise NumericError(f"{name} contains NaN or Inf entries")
    return arr, single


def check_square(a: np.ndarray, name: str = "A") -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    return a


def check_same_shape(a, b, name_a: str = "pred", name_b: str = "truth") -> None:
    if np.shape(a) != np.shape(b):
        raise DimensionError(
            f"{name_a} and {name_b} shapes differ: {np.shape(a)} vs {np.shape(b)}"
        )
