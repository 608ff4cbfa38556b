"""Discrete IMU pre-integration between two keyframes b_k and b_{k+1}.

The deltas are expressed in the b_k frame and gravity is *not* removed:

    alpha_{i+1} = alpha_i + beta_i dt + 1/2 R(gamma_i)(a_i - b_a) dt^2
    beta_{i+1}  = beta_i + R(gamma_i)(a_i - b_a) dt
    gamma_{i+1} = gamma_i ⊗ q(1/2 (w_i - b_w) dt)

Error state ordering is (dalpha, dbeta, dtheta, db_a, db_w), with the
orientation error applied on the right: gamma_true = gamma ⊗ Exp(dtheta).
"""

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from . import geom
from .errors import InsufficientDataError, InvalidInputError, InvalidStreamError
from .streams import BiasEstimate, ImuStream

log = logging.getLogger(__name__)

SEGMENT_LENGTH = 0.5

SCHEMES = ("euler", "midpoint", "rk4")
JACOBIAN_MODES = ("discrete", "first_order")

# slices into the 15-dim error state
A, B, TH, BA, BW = (slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15))


@dataclass
class NoiseModel:
    """IMU noise parameters.

    ``sigma_a``/``sigma_w`` are per-sample standard deviations of the white
    measurement noise; ``sigma_ba``/``sigma_bw`` are bias random-walk
    densities (per sqrt(s)).
    """

    sigma_a: float = 0.0
    sigma_w: float = 0.0
    sigma_ba: float = 0.0
    sigma_bw: float = 0.0

    def __post_init__(self):
        for k in ("sigma_a", "sigma_w", "sigma_ba", "sigma_bw"):
            if getattr(self, k) < 0:
                raise InvalidInputError(f"{k} must be >= 0")


@dataclass
class PreintegratedDelta:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    J: np.ndarray
    dt_total: float
    n_samples: int
    bias: BiasEstimate
    cov: np.ndarray = None

    @classmethod
    def initial(cls, bias=None):
        return cls(
            alpha=np.zeros(3),
            beta=np.zeros(3),
            gamma=geom.IDENTITY_QUAT.copy(),
            J=np.eye(15),
            dt_total=0.0,
            n_samples=0,
            bias=bias if bias is not None else BiasEstimate(),
        )

    @property
    def J_alpha_ba(self):
        return self.J[A, BA]

    @property
    def J_alpha_bw(self):
        return self.J[A, BW]

    @property
    def J_beta_ba(self):
        return self.J[B, BA]

    @property
    def J_beta_bw(self):
        return self.J[B, BW]

    @property
    def J_gamma_bw(self):
        return self.J[TH, BW]

    @property
    def rotation(self):
        return geom.quat_to_rot(self.gamma)


def _rot(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _qmul1(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def _increment1(phi, increment):
    x, y, z = phi
    r = math.sqrt(x * x + y * y + z * z)
    if increment == "exact" or (increment == "auto" and r > geom.SMALL_ANGLE_SWITCH):
        if r < 1e-8:
            k = 0.5 - r * r / 48.0
        else:
            k = math.sin(0.5 * r) / r
        return np.array([math.cos(0.5 * r), k * x, k * y, k * z])
    n = math.sqrt(1.0 + 0.25 * r * r)
    return np.array([1.0 / n, 0.5 * x / n, 0.5 * y / n, 0.5 * z / n])


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _increment_right_jacobian(phi, increment):
    """d/dphi of the realised increment, as a right perturbation of SO(3)."""
    x, y, z = phi
    r = math.sqrt(x * x + y * y + z * z)
    first = increment == "first_order" or (increment == "auto" and r <= geom.SMALL_ANGLE_SWITCH)
    if first and r > 1e-15:
        # realised angle is 2·atan(r/2) along phi
        g = 2.0 * math.atan(0.5 * r)
        u = phi / r
        uu = np.outer(u, u)
        D = uu / (1.0 + 0.25 * r * r) + (g / r) * (np.eye(3) - uu)
        theta = g * u
    else:
        D = None
        theta = phi
        g = r
    K = _skew(theta)
    if g < 1e-6:
        Jr = np.eye(3) - 0.5 * K + K @ K / 6.0
    else:
        Jr = np.eye(3) - (1.0 - math.cos(g)) / (g * g) * K + (g - math.sin(g)) / g**3 * (K @ K)
    return Jr if D is None else Jr @ D


def error_dynamics(R, acc, omega):
    """Continuous-time F (15x15) and G (15x12) of the linearized error state.

    ``acc`` and ``omega`` are bias-corrected measurements; ``R`` rotates the
    current body frame into b_k.
    """
    F = np.zeros((15, 15))
    F[A, B] = np.eye(3)
    F[B, TH] = -R @ _skew(acc)
    F[B, BA] = -R
    F[TH, TH] = -_skew(omega)
    F[TH, BW] = -np.eye(3)
    G = np.zeros((15, 12))
    G[B, 0:3] = -R
    G[TH, 3:6] = -np.eye(3)
    G[BA, 6:9] = np.eye(3)
    G[BW, 9:12] = np.eye(3)
    return F, G


def transition_matrix(R, a0, phi, dR, dt, *, increment="first_order", R1=None, a1=None, mode="discrete"):
    """One-step error-state transition Phi so that J_{i+1} = Phi J_i.

    ``mode='first_order'`` is the plain (I + F dt) recursion. ``'discrete'``
    is the exact linearization of the discrete update actually performed
    (Euler when ``R1`` is None, mid-point otherwise); it adds the dt^2 terms
    and the rotation-increment Jacobians that the first-order form drops.
    """
    if mode == "first_order":
        F, _ = error_dynamics(R, a0, phi / dt)
        return np.eye(15) + F * dt
    if mode != "discrete":
        raise InvalidInputError(f"unknown jacobian mode {mode!r}")

    jr = _increment_right_jacobian(phi, increment)
    if R1 is None:
        dacc_dth = -R @ _skew(a0)
        dacc_dba = -R
        dacc_dbw = np.zeros((3, 3))
    else:
        dacc_dth = -0.5 * (R @ _skew(a0) + R1 @ _skew(a1) @ dR.T)
        dacc_dba = -0.5 * (R + R1)
        dacc_dbw = 0.5 * dt * (R1 @ _skew(a1) @ jr)

    Phi = np.eye(15)
    h = 0.5 * dt * dt
    Phi[A, B] = dt * np.eye(3)
    Phi[A, TH] = h * dacc_dth
    Phi[A, BA] = h * dacc_dba
    Phi[A, BW] = h * dacc_dbw
    Phi[B, TH] = dt * dacc_dth
    Phi[B, BA] = dt * dacc_dba
    Phi[B, BW] = dt * dacc_dbw
    Phi[TH, TH] = dR.T
    Phi[TH, BW] = -dt * jr
    return Phi


def propagate_jacobian(state, sample, bias, dt, *, next_sample=None, increment="first_order", mode="discrete"):
    """Return the Jacobian after integrating ``sample`` over ``dt``.

    ``state`` supplies the current orientation and Jacobian. Passing
    ``next_sample`` selects the mid-point linearization.
    """
    if dt <= 0:
        raise InvalidInputError("dt must be positive")
    if bias is None:
        bias = BiasEstimate()
    R = _rot(state.gamma)
    a0 = np.asarray(sample.accel, dtype=float) - bias.b_a
    w = np.asarray(sample.gyro, dtype=float) - bias.b_w
    R1 = a1 = None
    if next_sample is not None:
        w = 0.5 * (w + np.asarray(next_sample.gyro, dtype=float) - bias.b_w)
        a1 = np.asarray(next_sample.accel, dtype=float) - bias.b_a
    phi = w * dt
    dq = geom._increment(phi, increment)
    dR = _rot(dq)
    if next_sample is not None:
        R1 = R @ dR
    return transition_matrix(R, a0, phi, dR, dt, increment=increment, R1=R1, a1=a1, mode=mode) @ state.J


def _validate(imu, segment_length, length_tol):
    if len(imu) < 2:
        raise InsufficientDataError(f"segment needs >= 2 samples, got {len(imu)}")
    t = imu.t
    if np.any(np.diff(t) <= 0):
        raise InvalidStreamError("segment timestamps not strictly increasing")
    if not (np.all(np.isfinite(imu.accel)) and np.all(np.isfinite(imu.gyro))):
        raise InvalidStreamError("non-finite IMU values in segment")
    if segment_length is not None:
        span = t[-1] - t[0]
        if abs(span - segment_length) > length_tol * segment_length:
            raise InsufficientDataError(
                f"segment spans {span:.4f} s, expected {segment_length} s ± {length_tol:.0%}"
            )


def half_step_values(t, x):
    """Values of sampled signals at interval midpoints by cubic Lagrange
    interpolation through the four nearest samples (one-sided at the ends).
    Falls back to the two-sample mean with fewer than four samples."""
    n = len(t)
    if n < 4:
        return 0.5 * (x[:-1] + x[1:])
    i = np.arange(n - 1)
    s = np.clip(i - 1, 0, n - 4)
    nodes = s[:, None] + np.arange(4)
    tm = 0.5 * (t[:-1] + t[1:])
    tn = t[nodes]
    w = np.ones((n - 1, 4))
    for j in range(4):
        for m in range(4):
            if m != j:
                w[:, j] *= (tm - tn[:, m]) / (tn[:, j] - tn[:, m])
    return np.einsum("nj,njc->nc", w, x[nodes])


def _qdot(q, w):
    return 0.5 * _qmul1(q, np.array([0.0, w[0], w[1], w[2]]))


def _rk4_nodes(t, acc, gyr):
    """Classical RK4 on (alpha, beta, q) with interval-midpoint inputs from
    cubic interpolation. Returns alpha, beta and the node quaternions."""
    acc_m = half_step_values(t, acc)
    gyr_m = half_step_values(t, gyr)
    n = len(t)
    qs = np.empty((n, 4))
    q = geom.IDENTITY_QUAT.copy()
    qs[0] = q
    alpha = np.zeros(3)
    beta = np.zeros(3)

    def f(qq, a):
        return _rot(qq / math.sqrt(qq @ qq)) @ a

    for i in range(n - 1):
        h = t[i + 1] - t[i]
        w0, wm, w1 = gyr[i], gyr_m[i], gyr[i + 1]
        a0, am, a1 = acc[i], acc_m[i], acc[i + 1]
        k1q = _qdot(q, w0)
        k1v = f(q, a0)
        k1p = beta
        q2 = q + 0.5 * h * k1q
        k2q = _qdot(q2, wm)
        k2v = f(q2, am)
        k2p = beta + 0.5 * h * k1v
        q3 = q + 0.5 * h * k2q
        k3q = _qdot(q3, wm)
        k3v = f(q3, am)
        k3p = beta + 0.5 * h * k2v
        q4 = q + h * k3q
        k4q = _qdot(q4, w1)
        k4v = f(q4, a1)
        k4p = beta + h * k3v
        alpha = alpha + h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        beta = beta + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        q = q + h / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
        q = q / math.sqrt(q @ q)
        qs[i + 1] = q
    return alpha, beta, qs


def preintegrate_segment(
    imu: ImuStream,
    bias: BiasEstimate = None,
    *,
    scheme="euler",
    increment="first_order",
    jacobian="discrete",
    noise: NoiseModel = None,
    segment_length=SEGMENT_LENGTH,
    length_tol=0.1,
    compute_jacobian=True,
) -> PreintegratedDelta:
    """Pre-integrate the samples of one segment.

    The first sample sits at b_k and the last at b_{k+1}. With ``scheme='euler'``
    each interval uses its left sample (the last sample's readings are
    unused); ``'midpoint'`` averages the gyro rates and the rotated
    accelerations at both ends of the interval; ``'rk4'`` is fourth order,
    with its Jacobian propagated by the midpoint transition along the RK4
    orientations.
    """
    if scheme not in SCHEMES:
        raise InvalidInputError(f"unknown scheme {scheme!r}")
    _validate(imu, segment_length, length_tol)
    if bias is None:
        bias = BiasEstimate()
    if not np.all(np.isfinite(bias.vector)):
        raise InvalidInputError("non-finite bias")

    t = imu.t
    acc = imu.accel - bias.b_a
    gyr = imu.gyro - bias.b_w
    mid = scheme in ("midpoint", "rk4")
    n = len(t)
    rk = _rk4_nodes(t, acc, gyr) if scheme == "rk4" else None

    alpha = np.zeros(3)
    beta = np.zeros(3)
    q = geom.IDENTITY_QUAT.copy()
    R = np.eye(3)
    J = np.eye(15)
    P = np.zeros((15, 15)) if noise is not None else None

    for i in range(n - 1):
        dt = t[i + 1] - t[i]
        a0 = acc[i]
        w = 0.5 * (gyr[i] + gyr[i + 1]) if mid else gyr[i]
        phi = w * dt
        if rk is None:
            q1 = _qmul1(q, _increment1(phi, increment))
            q1 = q1 / math.sqrt(q1 @ q1)
        else:
            q1 = rk[2][i + 1]
            if not (compute_jacobian or P is not None):
                continue
        R1 = _rot(q1)
        if mid:
            a1 = acc[i + 1]
            acc_b = 0.5 * (R @ a0 + R1 @ a1)
        else:
            acc_b = R @ a0

        if compute_jacobian or P is not None:
            dR = R.T @ R1
            Phi = transition_matrix(
                R, a0, phi, dR, dt, increment=increment,
                R1=R1 if mid else None, a1=acc[i + 1] if mid else None, mode=jacobian,
            )
            J = Phi @ J
            if P is not None:
                _, G = error_dynamics(R, a0, w)
                Q = np.diag(
                    np.r_[
                        np.full(3, noise.sigma_a**2 * dt),
                        np.full(3, noise.sigma_w**2 * dt),
                        np.full(3, noise.sigma_ba**2),
                        np.full(3, noise.sigma_bw**2),
                    ]
                )
                P = Phi @ P @ Phi.T + G @ Q @ G.T * dt

        alpha = alpha + beta * dt + 0.5 * acc_b * dt * dt
        beta = beta + acc_b * dt
        q, R = q1, R1

    if rk is not None:
        alpha, beta, q = rk[0], rk[1], rk[2][-1]
    return PreintegratedDelta(
        alpha=alpha,
        beta=beta,
        gamma=geom.canonical(q),
        J=J if compute_jacobian else None,
        dt_total=float(t[-1] - t[0]),
        n_samples=n,
        bias=bias,
        cov=P,
    )


def apply_bias_correction(delta: PreintegratedDelta, dba, dbw, *, warn_threshold=0.1):
    """First-order update of (alpha, beta, gamma) for a bias change.

    Returns a tuple ``(alpha, beta, gamma)``.
    """
    dba = np.asarray(dba, dtype=float)
    dbw = np.asarray(dbw, dtype=float)
    if np.linalg.norm(np.r_[dba, dbw]) > warn_threshold:
        log.warning("bias correction %.3g exceeds first-order threshold %.3g",
                    np.linalg.norm(np.r_[dba, dbw]), warn_threshold)
    alpha = delta.alpha + delta.J_alpha_ba @ dba + delta.J_alpha_bw @ dbw
    beta = delta.beta + delta.J_beta_ba @ dba + delta.J_beta_bw @ dbw
    gamma = geom.quat_mul(delta.gamma, geom.quat_from_small_angle(delta.J_gamma_bw @ dbw))
    return alpha, beta, gamma


def compose(first: PreintegratedDelta, second: PreintegratedDelta) -> PreintegratedDelta:
    """Chain two consecutive deltas (value fields only; J is not composed)."""
    R1 = geom.quat_to_rot(first.gamma)
    return replace(
        first,
        alpha=first.alpha + first.beta * second.dt_total + R1 @ second.alpha,
        beta=first.beta + R1 @ second.beta,
        gamma=geom.quat_mul(first.gamma, second.gamma),
        J=None,
        dt_total=first.dt_total + second.dt_total,
        n_samples=first.n_samples + second.n_samples - 1,
        cov=None,
    )
