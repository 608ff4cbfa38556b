"""Rotational hand-eye calibration between the helmet (mocap) frame and the IMU.

The core solver is the orthogonal Procrustes problem
``argmin_R Σ ||R A_i - B_i||_F²`` over proper rotations.
"""

from dataclasses import dataclass

import numpy as np

from . import geom
from .errors import DegenerateMotionError, InsufficientDataError, InvalidInputError
from .preint import preintegrate_segment
from .streams import ImuStream, PoseStream


@dataclass
class RotationPairSet:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        self.A = geom.check_rotation(np.asarray(self.A, dtype=float))
        self.B = geom.check_rotation(np.asarray(self.B, dtype=float))
        if self.A.shape != self.B.shape or self.A.ndim != 3:
            raise InvalidInputError("A and B must both be (n, 3, 3)")

    def __len__(self):
        return len(self.A)

    @classmethod
    def from_pairs(cls, pairs):
        A, B = zip(*pairs)
        return cls(np.stack(A), np.stack(B))


def solve_procrustes(M, *, rank_tol=1e-9):
    """Proper rotation maximizing tr(Rᵀ M).

    Raises DegenerateMotionError when rank(M) < 2, where the rotation is not
    determined.
    """
    U, S, Vt = np.linalg.svd(M)
    if S[0] <= 0 or np.sum(S > rank_tol * max(S[0], 1.0)) < 2:
        raise DegenerateMotionError(f"rank(M) < 2 (singular values {S})")
    d = np.sign(np.linalg.det(U @ Vt))
    return U @ np.diag([1.0, 1.0, d]) @ Vt


def procrustes_rotation(pairs: RotationPairSet):
    """Calibration rotation R with R A_i ≈ B_i. M = Σ B_i A_iᵀ."""
    if len(pairs) < 3:
        raise InsufficientDataError("need >= 3 rotation pairs")
    M = np.einsum("nij,nkj->ik", pairs.B, pairs.A)
    return solve_procrustes(M)


def residual(pairs: RotationPairSet, R):
    """Σ ||R A_i - B_i||_F²."""
    D = np.einsum("ij,njk->nik", R, pairs.A) - pairs.B
    return float(np.sum(D * D))


def procrustes_vectors(a, b, *, center=True, min_excitation=1e-3):
    """Rotation R with R a_i ≈ b_i for paired 3-vectors.

    Used with rotation vectors of relative rotations: if the IMU is mounted
    with rotation X in the helmet, B_i = Xᵀ A_i X and therefore
    log(B_i) = Xᵀ log(A_i), so R estimates Xᵀ. ``center`` removes a constant
    offset on either side (e.g. the effect of an uncompensated gyro bias).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 3:
        raise InsufficientDataError("need >= 3 vector pairs")
    if np.median(np.linalg.norm(a, axis=1)) < min_excitation:
        raise DegenerateMotionError("insufficient rotational excitation")
    if center:
        a = a - a.mean(axis=0)
        b = b - b.mean(axis=0)
    M = b.T @ a
    scale = np.sum(np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    return solve_procrustes(M, rank_tol=1e-6 if scale > 0 else 1.0)


@dataclass
class CalibrationResult:
    R: np.ndarray
    residual: float
    n_pairs: int
    rms_angle: float

    def to_dict(self):
        return {
            "R": self.R.tolist(),
            "residual": self.residual,
            "pair_count": self.n_pairs,
            "rms_vector_error_rad": self.rms_angle,
        }


def relative_rotation_pairs(imu: ImuStream, poses: PoseStream, *, baseline=0.25, stride=None):
    """Rotation vectors of helmet (a_i) and gyro-integrated IMU (b_i) relative
    rotations over consecutive ``baseline``-second windows.

    Helmet orientations at the window ends come from spherical interpolation
    of the pose stream so they share the IMU window timestamps.
    """
    stride = stride or baseline
    t_lo = max(imu.t[0], poses.t[0])
    t_hi = min(imu.t[-1], poses.t[-1])
    starts = np.arange(t_lo, t_hi - baseline + 1e-9, stride)
    if len(starts) < 3:
        raise InsufficientDataError("recording too short for calibration pairs")
    a, b = [], []
    for t0 in starts:
        t1 = t0 + baseline
        q0 = _pose_orientation_at(poses, t0)
        q1 = _pose_orientation_at(poses, t1)
        a.append(geom.quat_log(geom._qmul(geom.quat_conj(q0), q1)))
        d = preintegrate_segment(imu.window(t0, t1), scheme="midpoint", increment="exact",
                                 segment_length=None, compute_jacobian=False)
        b.append(geom.quat_log(d.gamma))
    return np.array(a), np.array(b)


def _pose_orientation_at(poses, t):
    i = int(np.clip(np.searchsorted(poses.t, t, side="right") - 1, 0, len(poses) - 2))
    s = (t - poses.t[i]) / (poses.t[i + 1] - poses.t[i])
    return geom.quat_slerp(poses.q[i], poses.q[i + 1], np.clip(s, 0.0, 1.0))


def calibrate(imu: ImuStream, poses: PoseStream, *, baseline=0.25, stride=None, center=True,
              refine_iterations=3) -> CalibrationResult:
    """Helmet-to-IMU rotation from a recording with rotational excitation.

    Centering absorbs a constant gyro bias only to first order, so the bias
    implied by the mean vector offset is removed from the gyro stream and
    the pairs are rebuilt ``refine_iterations`` times.

    The baseline should stay well below the gait period: windows spanning a
    whole stride return almost to the start orientation, and the small
    rotation vectors left are then dominated by slow gyro bias drift.
    """
    gyro_bias = np.zeros(3)
    for it in range(1 + (refine_iterations if center else 0)):
        stream = ImuStream(imu.t, imu.accel, imu.gyro - gyro_bias)
        a, b = relative_rotation_pairs(stream, poses, baseline=baseline, stride=stride)
        R = procrustes_vectors(a, b, center=center)
        if center:
            gyro_bias = gyro_bias + np.mean(b - a @ R.T, axis=0) / baseline
    if center:
        a = a - a.mean(axis=0)
        b = b - b.mean(axis=0)
    err = b - a @ R.T
    return CalibrationResult(
        R=R,
        residual=float(np.sum(err * err)),
        n_pairs=len(a),
        rms_angle=float(np.sqrt(np.mean(np.sum(err * err, axis=1)))),
    )
