"""Rotation-vector helpers shared by the synthetic generator and metrics."""

from __future__ import annotations

import numpy as np


def rotvec_to_matrix(r: np.ndarray) -> np.ndarray:
    """Rodrigues formula; r is axis * angle in radians."""
    r = np.asarray(r, np.float64).reshape(3)
    angle = np.linalg.norm(r)
    if angle < 1e-12:
        return np.eye(3)
    axis = r / angle
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rotvec_to_quat(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of the rotation vector; batched over
    leading axes."""
    r = np.asarray(r, np.float64)
    angle = np.linalg.norm(r, axis=-1, keepdims=True)
    half = 0.5 * angle
    small = angle < 1e-12
    # sin(a/2)/a -> 1/2 as a -> 0
    scale = np.where(small, 0.5, np.sin(half) / np.where(small, 1.0, angle))
    xyz = r * scale
    w = np.cos(half)
    return np.concatenate([w, xyz], axis=-1)


def quat_angle_deg(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Geodesic angle between unit quaternions, in degrees; batched."""
    dot = np.abs(np.sum(q1 * q2, axis=-1))
    return np.degrees(2.0 * np.arccos(np.clip(dot, 0.0, 1.0)))
