"""Points of R^n are plain float64 numpy vectors; these helpers validate them."""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, InputError


def as_point(x, dim: int | None = None, name: str = "x") -> np.ndarray:
    """Return ``x`` as a finite 1-D float64 array (a fresh copy).

    Scalars become length-1 vectors.  Raises InputError for non-finite
    coordinates and ContractViolation when ``dim`` is given and differs.
    """
    arr = np.array(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.size == 0:
        raise InputError(f"{name} must be a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} has non-finite coordinates")
    if dim is not None and arr.size != dim:
        raise ContractViolation(f"{name} has dimension {arr.size}, expected {dim}")
    return arr


def frozen(x: np.ndarray) -> np.ndarray:
    """Mark an array read-only so stored iterates cannot be mutated."""
    x.flags.writeable = False
    return x


def norm(x: np.ndarray) -> float:
    return float(np.linalg.norm(x))
