"""Input validation helpers shared by the estimator-style classes."""

from __future__ import annotations

import numpy as np


def as_points(X, name: str = "points") -> np.ndarray:
    """Coerce to a finite float64 array of shape (n, 3)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite values")
    return X


def as_unit_normals(N, n_points: int, tol: float = 1e-6,
                    name: str = "normals") -> np.ndarray:
    """Coerce to (n, 3) float64 and check unit length within ``tol``."""
    N = as_points(N, name=name)
    if N.shape[0] != n_points:
        raise ValueError(f"{name} count {N.shape[0]} does not match points {n_points}")
    lengths = np.linalg.norm(N, axis=1)
    err = np.abs(lengths - 1.0).max() if len(lengths) else 0.0
    if err > tol:
        raise ValueError(f"{name} are not unit length (max deviation {err:.3e})")
    return N


def as_vector3(v, name: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape != (3,):
        raise ValueError(f"{name} must have 3 components, got shape {v.shape}")
    if not np.isfinite(v).all():
        raise ValueError(f"{name} contains non-finite values")
    return v


def check_positive(value, name: str):
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value
