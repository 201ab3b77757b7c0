"""Exact Euclidean transformation of level-set parameters.

Only the places where the raw input coordinate enters the network need to
change under a rigid motion: the first layer, and the three skip columns of
the layer that re-reads the raw input. Rewriting those as
``W' = W R^-1, b' = b - W R^-1 t`` makes the transformed network satisfy
``f'(R x + t) = f(x)`` exactly (up to float rounding); every other layer is
copied unchanged.
"""

from __future__ import annotations

import numpy as np

from .sdf import LevelSetParams


def _rotation_translation(pose):
    """Accept a PoseSE3-like object or a plain (R, t) pair."""
    if isinstance(pose, tuple):
        R, t = pose
        return np.asarray(R, dtype=np.float64), np.asarray(t, dtype=np.float64)
    return pose.rotation, pose.translation


def euclidean_transform(params: LevelSetParams, pose) -> LevelSetParams:
    """Parameters of the field rigidly moved by ``pose`` (x -> R x + t)."""
    R, t = _rotation_translation(pose)
    if np.array_equal(R, np.eye(3)) and not np.any(t):
        return params.copy()
    rinv = R.T
    out = params.copy()
    w1 = out.weights[0] @ rinv
    out.weights[0] = w1
    out.biases[0] = params.biases[0] - w1 @ t
    cfg = params.config
    if cfg.has_skip:
        layer = cfg.skip_consumer - 1  # 0-based index
        h = cfg.hidden - 3
        wx = out.weights[layer][:, h:] @ rinv
        out.weights[layer] = np.concatenate([out.weights[layer][:, :h], wx], axis=1)
        out.biases[layer] = params.biases[layer] - wx @ t
    return out.validate()
