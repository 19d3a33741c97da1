"""Quaternion helpers. Quaternions are (w, x, y, z) along the last axis."""

import numpy as np

from .validation import check_unit_quaternions


def canonicalize(q):
    """Flip sign so that w >= 0 (removes the double-cover ambiguity)."""
    q = np.asarray(q, dtype=np.float64)
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def yaw_to_quat(yaw):
    """Rotation about +z by ``yaw`` radians, canonicalized."""
    half = 0.5 * np.asarray(yaw, dtype=np.float64)
    q = np.stack(
        [np.cos(half), np.zeros_like(half), np.zeros_like(half), np.sin(half)], axis=-1
    )
    return canonicalize(q)


def quat_conj(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_mul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_to_rotvec(q):
    """Axis-angle vector of ``q`` with the angle taken in [0, pi]."""
    q = canonicalize(q)
    w = np.clip(q[..., 0], -1.0, 1.0)
    xyz = q[..., 1:]
    s = np.linalg.norm(xyz, axis=-1)
    angle = 2.0 * np.arctan2(s, w)
    # angle/s -> 2 as s -> 0; use the series to avoid 0/0
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(s > 1e-12, angle / np.where(s > 1e-12, s, 1.0), 2.0 / np.maximum(w, 1e-300))
    return xyz * scale[..., None]


def quat_log_diff(q1, q2):
    """Tangent-space difference: rotation vector of ``q1^-1 * q2`` (shortest arc).

    Works on single quaternions or broadcastable stacks. Raises ``ValueError``
    for inputs that are not unit-norm within 1e-9.
    """
    check_unit_quaternions(q1, "q1")
    check_unit_quaternions(q2, "q2")
    return quat_to_rotvec(quat_mul(quat_conj(q1), q2))


def geodesic_angle(q1, q2):
    """arccos(2<q1,q2>^2 - 1) in radians, sign-invariant in both arguments."""
    dot = np.sum(np.asarray(q1, dtype=np.float64) * np.asarray(q2, dtype=np.float64), axis=-1)
    return np.arccos(np.clip(2.0 * dot * dot - 1.0, -1.0, 1.0))
