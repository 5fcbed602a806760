"""Small input-validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def as_float_array(x, name, shape=None):
    """Coerce to a float64 ndarray, optionally enforcing a shape."""
    arr = np.asarray(x, dtype=np.float64)
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"{name}: expected shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def check_unit_vectors(vectors, name, atol=1e-6):
    norms = np.linalg.norm(vectors, axis=-1)
    if not np.allclose(norms, 1.0, atol=atol):
        raise ValueError(f"{name}: rows must be unit vectors (norms {norms})")


def check_positive(value, name):
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive, got {value}")


def check_nonnegative(value, name):
    if not np.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be >= 0, got {value}")


def check_index(value, n, name):
    if not 1 <= value <= n:
        raise ValueError(f"{name} must be in [1, {n}], got {value}")


def freeze(arr):
    """Mark an array read-only; domain types are immutable after construction."""
    arr.setflags(write=False)
    return arr
