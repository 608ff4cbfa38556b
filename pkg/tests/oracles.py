"""Reference computations written independently of the package code paths
they check."""

import numpy as np
from scipy.spatial.transform import Rotation

from inertia_kit import geom, preint, simkit
from inertia_kit.streams import BiasEstimate, ImuStream

G = np.array([0.0, 0.0, 9.81])


def segment_samples(profile, t0, duration=0.5, rate=200.0):
    """Noise/bias-free IMU samples of a profile over [t0, t0 + duration]."""
    n = int(round(duration * rate)) + 1
    t = t0 + np.arange(n) / rate
    _, _, a, R, w = simkit._kinematics(profile, t)
    f = np.einsum("nji,nj->ni", R, a + G)
    return ImuStream(t, f, w)


def fine_deltas(profile, t0s, duration=0.5, rate=200.0, factor=100):
    """(alpha, beta, R) of each segment starting at ``t0s`` integrated with a
    step ``factor`` times finer than the sensor rate.

    Orientation advances by the exact exponential of the step-midpoint rate;
    velocity and position use the trapezoid rule on body-frame-rotated
    specific force. Vectorized over segments.
    """
    t0s = np.asarray(t0s, dtype=float)
    n = int(round(duration * rate)) * factor
    h = duration / n
    tt = t0s[:, None] + h * np.arange(n + 1)[None, :]
    tm = t0s[:, None] + h * (np.arange(n)[None, :] + 0.5)
    S = len(t0s)
    _, _, a, Rw, _ = simkit._kinematics(profile, tt.ravel())
    f = np.einsum("nji,nj->ni", Rw, a + G).reshape(S, n + 1, 3)
    _, _, _, _, wm = simkit._kinematics(profile, tm.ravel())
    steps = Rotation.from_rotvec((wm * h).reshape(S, n, 3).transpose(1, 0, 2).reshape(-1, 3))
    steps = steps.as_matrix().reshape(n, S, 3, 3)
    R = np.tile(np.eye(3), (S, 1, 1))
    alpha = np.zeros((S, 3))
    beta = np.zeros((S, 3))
    acc = np.einsum("sij,sj->si", R, f[:, 0])
    for k in range(n):
        R1 = R @ steps[k]
        acc1 = np.einsum("sij,sj->si", R1, f[:, k + 1])
        alpha += h * beta + h * h * (acc / 3 + acc1 / 6)
        beta += 0.5 * h * (acc + acc1)
        R, acc = R1, acc1
    return alpha, beta, R


def analytic_deltas(profile, t0, duration=0.5):
    """Exact continuous-time deltas from the generating kinematics."""
    p, v, _, R, _ = simkit._kinematics(profile, np.array([t0, t0 + duration]))
    alpha = R[0].T @ (p[1] - p[0] - v[0] * duration + 0.5 * G * duration**2)
    beta = R[0].T @ (v[1] - v[0] + G * duration)
    return alpha, beta, R[0].T @ R[1]


def rotation_angle(Ra, Rb):
    return Rotation.from_matrix(Ra.T @ Rb).magnitude()


def fd_blocks(seg, bias, eps=1e-4, **kw):
    """Central differences of (alpha, beta, theta) w.r.t. the 6 bias components."""
    base = preint.preintegrate_segment(seg, bias, compute_jacobian=False, **kw)
    D = np.zeros((9, 6))
    for j in range(6):
        e = np.zeros(6)
        e[j] = eps
        p = preint.preintegrate_segment(seg, BiasEstimate.from_vector(bias.vector + e), compute_jacobian=False, **kw)
        m = preint.preintegrate_segment(seg, BiasEstimate.from_vector(bias.vector - e), compute_jacobian=False, **kw)
        dth = geom.quat_log(geom.quat_mul(geom.quat_conj(base.gamma), p.gamma)) - \
            geom.quat_log(geom.quat_mul(geom.quat_conj(base.gamma), m.gamma))
        D[:, j] = np.r_[p.alpha - m.alpha, p.beta - m.beta, dth] / (2 * eps)
    return D


def jacobian_errors(seg, bias, **kw):
    d = preint.preintegrate_segment(seg, bias, **kw)
    D = fd_blocks(seg, bias, **kw)
    blocks = {
        "alpha_ba": (d.J_alpha_ba, D[0:3, 0:3]),
        "alpha_bw": (d.J_alpha_bw, D[0:3, 3:6]),
        "beta_ba": (d.J_beta_ba, D[3:6, 0:3]),
        "beta_bw": (d.J_beta_bw, D[3:6, 3:6]),
        "gamma_bw": (d.J_gamma_bw, D[6:9, 3:6]),
    }
    return {k: np.linalg.norm(a - b) / np.linalg.norm(b) for k, (a, b) in blocks.items()}
