"""Rotation and quaternion algebra.

Conventions
-----------
- Quaternions are Hamilton, scalar-first ``(w, x, y, z)``.
- A stored orientation ``q`` maps body-frame vectors to the world frame
  (``R(q) @ v_body = v_world``).
- Every normalizing operation returns the canonical sign ``w >= 0``.
- Functions accept single values or stacked batches along leading axes
  unless noted otherwise.
"""

import numpy as np

from .errors import InvalidInputError

SMALL_ANGLE_SWITCH = 1e-4
IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])

_INCREMENT_MODES = ("auto", "exact", "first_order")


def _finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("non-finite input")


def canonical(q):
    """Flip sign so that w >= 0."""
    q = np.asarray(q, dtype=float)
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    _finite(q)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise InvalidInputError("zero-norm quaternion")
    return canonical(q / n)


def _qmul(a, b):
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


def quat_mul(a, b):
    """Hamilton product ``a ⊗ b``, renormalized and canonicalized."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _finite(a, b)
    for q in (a, b):
        if np.any(np.abs(np.linalg.norm(q, axis=-1) - 1.0) > 1e-6):
            raise InvalidInputError("quaternion is not unit-norm within 1e-6")
    return quat_normalize(_qmul(a, b))


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


quat_inv = quat_conj


def quat_exp(theta):
    """Exact exponential map of a rotation vector."""
    theta = np.asarray(theta, dtype=float)
    angle = np.linalg.norm(theta, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(x/2)/x expanded near zero
    k = np.where(angle > 1e-8, np.sin(half) / np.where(angle > 1e-8, angle, 1.0), 0.5 - angle**2 / 48.0)
    return canonical(np.concatenate([np.cos(half), k * theta], axis=-1))


def quat_log(q):
    """Rotation vector of a unit quaternion (shortest rotation)."""
    q = canonical(np.asarray(q, dtype=float))
    w = np.clip(q[..., :1], -1.0, 1.0)
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, w)
    k = np.where(s > 1e-12, angle / np.where(s > 1e-12, s, 1.0), 2.0 / np.maximum(w, 1e-300))
    return k * v


def quat_from_small_angle(theta, mode="auto"):
    """Quaternion increment for a small rotation vector ``theta``.

    ``first_order`` returns normalize(1, theta/2), the textbook increment used
    by discrete pre-integration. ``exact`` is the exponential map. ``auto``
    uses the first-order form only while ``|theta| <= 1e-4``, where both agree
    to round-off.
    """
    theta = np.asarray(theta, dtype=float)
    _finite(theta)
    if mode not in _INCREMENT_MODES:
        raise InvalidInputError(f"unknown increment mode {mode!r}")
    angle = np.linalg.norm(theta, axis=-1)
    if np.any(angle >= np.pi):
        raise InvalidInputError("small-angle increment requires |theta| < pi")
    return _increment(theta, mode)


def _increment(theta, mode):
    if mode == "exact":
        return quat_exp(theta)
    first = np.concatenate([np.ones(theta.shape[:-1] + (1,)), 0.5 * theta], axis=-1)
    first = first / np.linalg.norm(first, axis=-1, keepdims=True)
    if mode == "first_order":
        return first
    angle = np.linalg.norm(theta, axis=-1, keepdims=True)
    return np.where(angle > SMALL_ANGLE_SWITCH, quat_exp(theta), first)


def increment_angle(theta, mode):
    """Rotation vector actually realised by ``quat_from_small_angle(theta, mode)``."""
    theta = np.asarray(theta, dtype=float)
    r = np.linalg.norm(theta)
    if mode == "exact" or (mode == "auto" and r > SMALL_ANGLE_SWITCH) or r < 1e-15:
        return theta.copy()
    return (2.0 * np.arctan(0.5 * r) / r) * theta


def increment_jacobian(theta, mode):
    """Derivative of the realised rotation vector with respect to ``theta``."""
    theta = np.asarray(theta, dtype=float)
    r = np.linalg.norm(theta)
    if mode == "exact" or (mode == "auto" and r > SMALL_ANGLE_SWITCH) or r < 1e-15:
        return np.eye(3)
    u = theta / r
    g = 2.0 * np.arctan(0.5 * r)
    dg = 1.0 / (1.0 + 0.25 * r * r)
    uu = np.outer(u, u)
    return dg * uu + (g / r) * (np.eye(3) - uu)


def skew(v):
    """Cross-product matrix: ``skew(v) @ u == cross(v, u)``."""
    v = np.asarray(v, dtype=float)
    x, y, z = np.moveaxis(v, -1, 0)
    zero = np.zeros_like(x)
    return np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )


def quat_to_rot(q):
    q = np.asarray(q, dtype=float)
    _finite(q)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
        ],
        axis=-2,
    )


def check_rotation(R, tol=1e-6):
    R = np.asarray(R, dtype=float)
    _finite(R)
    if R.shape[-2:] != (3, 3):
        raise InvalidInputError(f"expected (...,3,3) rotation, got {R.shape}")
    eye = np.broadcast_to(np.eye(3), R.shape)
    if np.any(np.abs(np.swapaxes(R, -1, -2) @ R - eye) > tol) or np.any(
        np.abs(np.linalg.det(R) - 1.0) > tol
    ):
        raise InvalidInputError("matrix is not a proper rotation within tolerance")
    return R


def rot_to_quat(R):
    """Shepperd's method; vectorized over leading axes."""
    R = check_rotation(R)
    m00, m11, m22 = R[..., 0, 0], R[..., 1, 1], R[..., 2, 2]
    tr = m00 + m11 + m22
    cands = np.stack([tr, m00, m11, m22], axis=-1)
    pick = np.argmax(cands, axis=-1)

    with np.errstate(divide="ignore", invalid="ignore"):
        # w largest
        s = np.sqrt(np.maximum(1.0 + tr, 0.0)) * 2.0
        qw = np.stack(
            [0.25 * s, (R[..., 2, 1] - R[..., 1, 2]) / s, (R[..., 0, 2] - R[..., 2, 0]) / s, (R[..., 1, 0] - R[..., 0, 1]) / s],
            axis=-1,
        )
        s = np.sqrt(np.maximum(1.0 + m00 - m11 - m22, 0.0)) * 2.0
        qx = np.stack(
            [(R[..., 2, 1] - R[..., 1, 2]) / s, 0.25 * s, (R[..., 0, 1] + R[..., 1, 0]) / s, (R[..., 0, 2] + R[..., 2, 0]) / s],
            axis=-1,
        )
        s = np.sqrt(np.maximum(1.0 - m00 + m11 - m22, 0.0)) * 2.0
        qy = np.stack(
            [(R[..., 0, 2] - R[..., 2, 0]) / s, (R[..., 0, 1] + R[..., 1, 0]) / s, 0.25 * s, (R[..., 1, 2] + R[..., 2, 1]) / s],
            axis=-1,
        )
        s = np.sqrt(np.maximum(1.0 - m00 - m11 + m22, 0.0)) * 2.0
        qz = np.stack(
            [(R[..., 1, 0] - R[..., 0, 1]) / s, (R[..., 0, 2] + R[..., 2, 0]) / s, (R[..., 1, 2] + R[..., 2, 1]) / s, 0.25 * s],
            axis=-1,
        )
        stacked = np.stack([qw, qx, qy, qz], axis=0)
    out = np.take_along_axis(stacked, pick[None, ..., None], axis=0)[0]
    return quat_normalize(out)


def rot_exp(phi):
    """Rodrigues formula, single rotation vector."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    K = skew(phi)
    if angle < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / angle**2
    return np.eye(3) + a * K + b * K @ K


def rot_log(R):
    return quat_log(rot_to_quat(R))


def right_jacobian(phi):
    """Right Jacobian of SO(3): Exp(phi + d) ≈ Exp(phi) Exp(Jr(phi) d)."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    K = skew(phi)
    if angle < 1e-6:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    return (
        np.eye(3)
        - (1.0 - np.cos(angle)) / angle**2 * K
        + (angle - np.sin(angle)) / angle**3 * K @ K
    )


def geodesic_angle(R1, R2):
    """Angle (rad) of the relative rotation R1ᵀR2."""
    R = np.swapaxes(np.asarray(R1), -1, -2) @ np.asarray(R2)
    c = (np.trace(R, axis1=-2, axis2=-1) - 1.0) / 2.0
    s = np.linalg.norm(
        np.stack([R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]], axis=-1),
        axis=-1,
    ) / 2.0
    return np.arctan2(s, c)


def quat_slerp(q0, q1, s):
    """Spherical interpolation from q0 (s=0) to q1 (s=1); s may be an array."""
    q0 = canonical(np.asarray(q0, dtype=float))
    q1 = np.asarray(q1, dtype=float)
    if np.dot(q0, q1) < 0:
        q1 = -q1
    rel = _qmul(quat_conj(q0), q1)
    phi = quat_log(rel)
    s = np.asarray(s, dtype=float)[..., None]
    return canonical(_qmul(q0, quat_exp(s * phi)))


def random_quaternions(n, rng):
    """Uniformly distributed unit quaternions."""
    q = rng.standard_normal((n, 4))
    return quat_normalize(q)


def euler_zyx_to_rot(yaw, pitch, roll):
    """R = Rz(yaw) Ry(pitch) Rx(roll); vectorized over equal-shaped inputs."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    return np.stack(
        [
            np.stack([cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr], axis=-1),
            np.stack([sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr], axis=-1),
            np.stack([-sp, cp * sr, cp * cr], axis=-1),
        ],
        axis=-2,
    )
