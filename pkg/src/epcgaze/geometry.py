"""Gaze angle representations, angular error and the supervised gaze loss.

Angles are ``(yaw, pitch)`` pairs in radians.  Every function accepts either a
single pair of shape ``(2,)`` or a batch of shape ``(n, 2)``.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InvalidInput

HALF_PI = np.pi / 2


class GazeAngles(NamedTuple):
    yaw: float
    pitch: float


class GazeVector(NamedTuple):
    x: float
    y: float
    z: float


def _as_angles(g) -> np.ndarray:
    arr = np.asarray(g, dtype=np.float64)
    if arr.shape[-1:] != (2,) or arr.ndim > 2:
        raise InvalidInput(f"expected (..., 2) yaw/pitch array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("gaze angles must be finite")
    return arr


def angles_to_vector(g) -> np.ndarray:
    """Convert yaw/pitch to a unit 3D direction ``(cos p sin y, sin p, cos p cos y)``."""
    g = _as_angles(g)
    yaw, pitch = g[..., 0], g[..., 1]
    cp = np.cos(pitch)
    return np.stack([cp * np.sin(yaw), np.sin(pitch), cp * np.cos(yaw)], axis=-1)


def vector_to_angles(v) -> np.ndarray:
    """Inverse of :func:`angles_to_vector` for vectors with positive-ish z."""
    v = np.asarray(v, dtype=np.float64)
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    yaw = np.arctan2(v[..., 0], v[..., 2])
    pitch = np.arcsin(np.clip(v[..., 1], -1.0, 1.0))
    return np.stack([yaw, pitch], axis=-1)


def clamp_angles(g) -> np.ndarray:
    """Clamp both angles to [-pi/2, pi/2].  Used only for reported values."""
    return np.clip(_as_angles(g), -HALF_PI, HALF_PI)


def _angle_between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    # arccos(clip(u.v)) evaluated as atan2(|u x v|, u.v): same value, but exact
    # at 0 and well conditioned for small angles
    dot = np.clip(np.sum(u * v, axis=-1), -1.0, 1.0)
    return np.arctan2(np.linalg.norm(np.cross(u, v), axis=-1), dot)


def angular_error(a, b) -> np.ndarray | float:
    """Angle in radians between the gaze directions ``a`` and ``b``."""
    err = _angle_between(angles_to_vector(a), angles_to_vector(b))
    return float(err) if np.ndim(err) == 0 else err


def _direction_jacobian(g: np.ndarray) -> np.ndarray:
    # d(x, y, z)/d(yaw, pitch), shape (n, 3, 2)
    yaw, pitch = g[:, 0], g[:, 1]
    sy, cy, sp, cp = np.sin(yaw), np.cos(yaw), np.sin(pitch), np.cos(pitch)
    zero = np.zeros_like(yaw)
    d_yaw = np.stack([cp * cy, zero, -cp * sy], axis=-1)
    d_pitch = np.stack([-sp * sy, cp, -sp * cy], axis=-1)
    return np.stack([d_yaw, d_pitch], axis=-1)


def gaze_loss(pred, gt) -> float:
    """Mean angular error (radians) of a batch of predictions."""
    return float(np.mean(angular_error(np.atleast_2d(pred), np.atleast_2d(gt))))


def gaze_loss_and_grad(pred, gt) -> tuple[float, np.ndarray]:
    """Mean angular error and its gradient with respect to ``pred``.

    The gradient of ``arccos(u . v)`` is ``-v / sin(theta)`` pushed through
    the angle-to-vector Jacobian.  ``sin(theta)`` is taken as ``|u x v|``,
    which stays accurate for small angles.  Where the two directions coincide
    the gradient is defined as zero.

    Returns
    -------
    loss : float
        Mean over the batch.
    grad : ndarray, shape (n, 2)
        Gradient of the mean loss, so it already carries the ``1/n`` factor.
    """
    pred = np.atleast_2d(_as_angles(pred))
    gt = np.atleast_2d(_as_angles(gt))
    n = pred.shape[0]
    u = angles_to_vector(pred)
    v = angles_to_vector(gt)
    loss = _angle_between(u, v)
    sin_theta = np.linalg.norm(np.cross(u, v), axis=-1)
    live = sin_theta > 0.0
    scale = np.zeros(n)
    scale[live] = -1.0 / sin_theta[live]
    d_u = scale[:, None] * v
    grad = np.einsum("nc,nca->na", d_u, _direction_jacobian(pred)) / n
    return float(loss.mean()), grad
