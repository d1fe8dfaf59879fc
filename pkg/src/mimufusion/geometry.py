"""Rotation algebra: skew operators, SO(3) exp/log, the right Jacobian,
and Hamilton quaternion conversions.

Conventions used throughout the package:

* Quaternions are Hamilton, scalar first ``(w, x, y, z)``, canonicalized
  to ``w >= 0``. ``q`` written ``q_BA`` rotates A-frame coordinates into
  the B frame: ``v_B = q * v_A * q^-1``.
* A rotation matrix written ``R_BA`` does the same: ``v_B = R_BA @ v_A``.
"""
from __future__ import annotations

import numpy as np

# Below this angle (rad) series expansions replace the closed forms.
SMALL_ANGLE = 1e-8


def skew(v) -> np.ndarray:
    """Cross-product matrix: skew(v) @ u == cross(v, u)."""
    v = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def skew_many(v) -> np.ndarray:
    """Stacked skew matrices for an (n, 3) array, returns (n, 3, 3)."""
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    out = np.zeros((n, 3, 3))
    out[:, 0, 1] = -v[:, 2]
    out[:, 0, 2] = v[:, 1]
    out[:, 1, 0] = v[:, 2]
    out[:, 1, 2] = -v[:, 0]
    out[:, 2, 0] = -v[:, 1]
    out[:, 2, 1] = v[:, 0]
    return out


def vee(m) -> np.ndarray:
    """Inverse of skew for an exactly antisymmetric matrix."""
    m = np.asarray(m, dtype=float)
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def exp_so3(phi) -> np.ndarray:
    """Rodrigues exponential of a rotation vector.

    Falls back to the second-order Taylor expansion below SMALL_ANGLE so
    the map stays exact to machine precision near zero.
    """
    phi = np.asarray(phi, dtype=float)
    angle = float(np.linalg.norm(phi))
    s = skew(phi)
    if angle < SMALL_ANGLE:
        return np.eye(3) + s + 0.5 * (s @ s)
    return (
        np.eye(3)
        + (np.sin(angle) / angle) * s
        + ((1.0 - np.cos(angle)) / angle**2) * (s @ s)
    )


def exp_so3_many(phi) -> np.ndarray:
    """Vectorized exp_so3 for an (n, 3) array of rotation vectors."""
    phi = np.asarray(phi, dtype=float)
    angles = np.linalg.norm(phi, axis=1)
    s = skew_many(phi)
    ss = s @ s
    small = angles < SMALL_ANGLE
    a = np.empty_like(angles)
    b = np.empty_like(angles)
    a[small] = 1.0
    b[small] = 0.5
    big = ~small
    th = angles[big]
    a[big] = np.sin(th) / th
    b[big] = (1.0 - np.cos(th)) / th**2
    return np.eye(3)[None, :, :] + a[:, None, None] * s + b[:, None, None] * ss


def log_so3(R) -> np.ndarray:
    """Rotation vector of a rotation matrix, with norm <= pi.

    Near pi the dominant-axis extraction is used because the
    antisymmetric part of R degenerates there.
    """
    R = np.asarray(R, dtype=float)
    w = 0.5 * vee(R - R.T)  # sin(angle) * axis
    sin_angle = float(np.linalg.norm(w))
    cos_angle = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    # atan2 keeps the angle well conditioned where arccos alone degrades
    # (cos near +-1); the measured sine also cancels out of angle/sin * w.
    angle = float(np.arctan2(sin_angle, cos_angle))
    if angle < SMALL_ANGLE:
        return w
    if np.pi - angle < 1e-6:
        # R ~ 2 a a^T - I: pick the axis from the strongest column of the
        # symmetrized R + I (symmetrizing drops the sin(angle) [a]x term).
        m = 0.5 * (R + R.T) + np.eye(3)
        k = int(np.argmax(np.diag(m)))
        axis = m[:, k] / np.linalg.norm(m[:, k])
        # sin(angle) >= 0, so the antisymmetric part fixes the sign when
        # it has not fully collapsed.
        if np.dot(w, axis) < 0.0:
            axis = -axis
        return angle * axis
    return (angle / sin_angle) * w


def right_jacobian(phi) -> np.ndarray:
    """Right Jacobian of SO(3): exp(phi + d) ~ exp(phi) exp(Jr(phi) d)."""
    phi = np.asarray(phi, dtype=float)
    angle = float(np.linalg.norm(phi))
    s = skew(phi)
    if angle < SMALL_ANGLE:
        return np.eye(3) - 0.5 * s + (1.0 / 6.0) * (s @ s)
    return (
        np.eye(3)
        - ((1.0 - np.cos(angle)) / angle**2) * s
        + ((angle - np.sin(angle)) / angle**3) * (s @ s)
    )


def right_jacobian_many(phi) -> np.ndarray:
    """Vectorized right_jacobian for an (n, 3) array."""
    phi = np.asarray(phi, dtype=float)
    angles = np.linalg.norm(phi, axis=1)
    s = skew_many(phi)
    ss = s @ s
    small = angles < SMALL_ANGLE
    a = np.empty_like(angles)
    b = np.empty_like(angles)
    a[small] = 0.5
    b[small] = 1.0 / 6.0
    big = ~small
    th = angles[big]
    a[big] = (1.0 - np.cos(th)) / th**2
    b[big] = (th - np.sin(th)) / th**3
    return np.eye(3)[None, :, :] - a[:, None, None] * s + b[:, None, None] * ss


def _canonical(q: np.ndarray) -> np.ndarray:
    q = q / np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    return q


def quat_from_rotation(R) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix, w >= 0.

    Shepperd's method: branch on the largest of trace and diagonal
    entries for numerical stability.
    """
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([
            0.25 * s,
            (R[2, 1] - R[1, 2]) / s,
            (R[0, 2] - R[2, 0]) / s,
            (R[1, 0] - R[0, 1]) / s,
        ])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([
            (R[2, 1] - R[1, 2]) / s,
            0.25 * s,
            (R[0, 1] + R[1, 0]) / s,
            (R[0, 2] + R[2, 0]) / s,
        ])
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([
            (R[0, 2] - R[2, 0]) / s,
            (R[0, 1] + R[1, 0]) / s,
            0.25 * s,
            (R[1, 2] + R[2, 1]) / s,
        ])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([
            (R[1, 0] - R[0, 1]) / s,
            (R[0, 2] + R[2, 0]) / s,
            (R[1, 2] + R[2, 1]) / s,
            0.25 * s,
        ])
    return _canonical(q)


def rotation_from_quat(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a * b (composition: rotate by b, then by a)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector(s) v by quaternion q; v may be (3,) or (n, 3)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    u = q[1:]
    w = q[0]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_from_rotvec(phi) -> np.ndarray:
    """Unit quaternion for a rotation vector (canonical sign)."""
    phi = np.asarray(phi, dtype=float)
    angle = float(np.linalg.norm(phi))
    if angle < SMALL_ANGLE:
        # sin(a/2)/a ~ 1/2 - a^2/48
        factor = 0.5 - angle**2 / 48.0
        q = np.concatenate(([np.cos(angle / 2.0)], factor * phi))
    else:
        q = np.concatenate((
            [np.cos(angle / 2.0)],
            (np.sin(angle / 2.0) / angle) * phi,
        ))
    return _canonical(q)


def geodesic_angle(Ra, Rb) -> float:
    """Angle (rad) of the relative rotation between two matrices."""
    return float(np.linalg.norm(log_so3(np.asarray(Ra).T @ np.asarray(Rb))))


def is_rotation(R, tol: float = 1e-9) -> bool:
    """True when R is orthogonal with determinant +1 within tol."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return (
        np.allclose(R.T @ R, np.eye(3), atol=tol)
        and abs(float(np.linalg.det(R)) - 1.0) < tol
    )
