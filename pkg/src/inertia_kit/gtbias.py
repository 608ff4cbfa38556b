"""Ground-truth IMU biases from motion-capture poses.

For every segment [b_k, b_{k+1}] the nominal deltas computed from poses and
velocities are compared with the pre-integrated deltas, and the bias change
that explains the difference to first order is solved by least squares.
"""

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import signal

from . import geom
from .errors import (
    AlignmentError,
    DataQualityError,
    GapError,
    IllConditionedSegmentError,
    InsufficientDataError,
    InvalidInputError,
    StreamError,
)
from .preint import SEGMENT_LENGTH, PreintegratedDelta, preintegrate_segment
from .streams import BiasEstimate, ImuStream, PoseStream, VelocityStream

log = logging.getLogger(__name__)


@dataclass
class GravityModel:
    """Gravity reaction vector g^w in the world frame (+z up).

    A static accelerometer reads R_wᵀ g^w, i.e. +|g| along body-up.
    """

    g_w: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 9.81]))
    enabled: bool = True

    def __post_init__(self):
        self.g_w = np.asarray(self.g_w, dtype=float).reshape(3)
        if not self.enabled:
            self.g_w = np.zeros(3)
        elif not 9.78 <= np.linalg.norm(self.g_w) <= 9.84:
            raise InvalidInputError(f"|g| = {np.linalg.norm(self.g_w):.4f} outside [9.78, 9.84]")


@dataclass
class NominalDelta:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    dt_total: float


def _stencil_derivative(p, h, order=4):
    """Central differences of the given order (4 or 6) with one-sided
    fourth-order formulas at the two samples nearest each end."""
    n = len(p)
    v = np.empty_like(p)
    if n < 5:
        v[1:-1] = (p[2:] - p[:-2]) / (2 * h)
        v[0] = (p[1] - p[0]) / h
        v[-1] = (p[-1] - p[-2]) / h
        return v
    v[2:-2] = (p[:-4] - 8 * p[1:-3] + 8 * p[3:-1] - p[4:]) / (12 * h)
    v[0] = (-25 * p[0] + 48 * p[1] - 36 * p[2] + 16 * p[3] - 3 * p[4]) / (12 * h)
    v[1] = (-3 * p[0] - 10 * p[1] + 18 * p[2] - 6 * p[3] + p[4]) / (12 * h)
    v[-1] = (25 * p[-1] - 48 * p[-2] + 36 * p[-3] - 16 * p[-4] + 3 * p[-5]) / (12 * h)
    v[-2] = (3 * p[-1] + 10 * p[-2] - 18 * p[-3] + 6 * p[-4] - p[-5]) / (12 * h)
    if order == 6 and n >= 7:
        v[3:-3] = (-p[:-6] + 9 * p[1:-5] - 45 * p[2:-4] + 45 * p[4:-2] - 9 * p[5:-1] + p[6:]) / (60 * h)
    return v


def estimate_velocities(poses: PoseStream, *, cutoff=10.0, filter_order=4, stencil="central6",
                        jitter_tol=0.05, max_gap=3.0) -> VelocityStream:
    """World-frame velocities by finite differences of positions.

    Uniformly spaced streams use the sixth-order seven-point stencil
    (``'central4'`` and ``'central2'`` give the five- and three-point ones); otherwise a
    second-order non-uniform difference is used. A zero-phase Butterworth
    low-pass at ``cutoff`` Hz follows (``cutoff=None`` disables it).
    """
    if len(poses) < 3:
        raise InsufficientDataError("need >= 3 poses to estimate velocities")
    t, p = poses.t, poses.p
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise InsufficientDataError("pose timestamps not strictly increasing")
    h = float(np.median(dt))
    big = np.flatnonzero(dt > max_gap * h)
    if len(big):
        raise GapError(f"pose gap of {dt[big[0]]:.3f} s after t={t[big[0]]:.3f}", index=int(big[0]))

    if np.all(np.abs(dt - h) <= jitter_tol * h):
        if stencil in ("central4", "central6"):
            v = _stencil_derivative(p, h, 6 if stencil == "central6" else 4)
        elif stencil == "central2":
            v = np.gradient(p, h, axis=0, edge_order=1)
        else:
            raise InvalidInputError(f"unknown stencil {stencil!r}")
    else:
        v = np.gradient(p, t, axis=0, edge_order=2)

    if cutoff is not None:
        fs = 1.0 / h
        if cutoff < 0.5 * fs:
            b, a = signal.butter(filter_order, cutoff / (0.5 * fs))
            if len(p) > 3 * max(len(a), len(b)):
                v = signal.filtfilt(b, a, v, axis=0)
    return VelocityStream(t.copy(), v)


def nominal_deltas(pose_k, pose_k1, vel_k, vel_k1, gravity: GravityModel = None, *, align_tol=1e-3) -> NominalDelta:
    """Deltas between two keyframes implied by ground-truth poses and velocities."""
    gravity = gravity or GravityModel()
    if abs(pose_k.t - vel_k.t) > align_tol or abs(pose_k1.t - vel_k1.t) > align_tol:
        raise AlignmentError("pose and velocity timestamps differ by more than 1 ms")
    dt = pose_k1.t - pose_k.t
    if dt <= 0:
        raise AlignmentError("keyframes out of order")
    g = gravity.g_w
    R_wb = geom.quat_to_rot(pose_k.q).T
    alpha = R_wb @ (pose_k1.p - pose_k.p + 0.5 * g * dt * dt - vel_k.v * dt)
    beta = R_wb @ (vel_k1.v + g * dt - vel_k.v)
    gamma = geom.quat_mul(geom.quat_conj(geom.quat_normalize(pose_k.q)), geom.quat_normalize(pose_k1.q))
    return NominalDelta(alpha, beta, gamma, float(dt))


def segment_residual(nominal: NominalDelta, alpha, beta, gamma):
    """Stacked 9-vector (r_alpha, r_beta, r_gamma)."""
    dq = geom.canonical(geom._qmul(geom.quat_conj(gamma), nominal.gamma))
    return np.r_[nominal.alpha - alpha, nominal.beta - beta, 2.0 * dq[1:]]


def segment_system(nominal: NominalDelta, hat: PreintegratedDelta):
    """Linear system H δb = r relating bias change to the residual."""
    H = np.zeros((9, 6))
    H[0:3, 0:3] = hat.J_alpha_ba
    H[0:3, 3:6] = hat.J_alpha_bw
    H[3:6, 0:3] = hat.J_beta_ba
    H[3:6, 3:6] = hat.J_beta_bw
    H[6:9, 3:6] = hat.J_gamma_bw
    return H, segment_residual(nominal, hat.alpha, hat.beta, hat.gamma)


def solve_segment_bias(nominal: NominalDelta, hat: PreintegratedDelta, *, max_condition=1e8) -> BiasEstimate:
    """Least-squares bias for one segment, returned as prior + correction."""
    H, r = segment_system(nominal, hat)
    if not np.all(np.isfinite(H)):
        raise IllConditionedSegmentError("non-finite Jacobian", condition=np.inf)
    cond = float(np.linalg.cond(H))
    if not np.isfinite(cond) or cond > max_condition:
        raise IllConditionedSegmentError(f"segment system condition {cond:.3g} > {max_condition:.0g}", condition=cond)
    db, *_ = np.linalg.lstsq(H, r, rcond=None)
    return BiasEstimate(hat.bias.b_a + db[:3], hat.bias.b_w + db[3:], hat.bias.segment_index)


@dataclass
class BiasRecord:
    index: int
    t_start: float
    t_end: float
    b_a: list
    b_w: list
    valid: bool = True
    reason: str = ""
    residual_alpha: float = float("nan")
    residual_beta: float = float("nan")
    residual_gamma: float = float("nan")
    residual_after: float = float("nan")
    condition: float = float("nan")

    @property
    def vector(self):
        if self.b_a is None:
            return np.full(6, np.nan)
        return np.r_[self.b_a, self.b_w].astype(float)

    @property
    def estimate(self):
        return BiasEstimate(self.b_a, self.b_w, self.index)

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and not np.isfinite(v):
                d[k] = None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("residual_alpha", "residual_beta", "residual_gamma", "residual_after", "condition"):
            if d.get(k) is None:
                d[k] = float("nan")
        return cls(**d)


def write_bias_jsonl(path, records):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_bias_jsonl(path):
    with open(path) as f:
        return [BiasRecord.from_dict(json.loads(line)) for line in f if line.strip()]


def imu_frame_poses(poses: PoseStream, calib_R=None) -> PoseStream:
    """Re-express pose orientations in the IMU frame.

    ``calib_R`` maps helmet-frame vectors to IMU-frame vectors (the output of
    hand-eye calibration), so R_imu^w = R_helmet^w · calib_Rᵀ.
    """
    if calib_R is None:
        return poses
    q_off = geom.rot_to_quat(np.asarray(calib_R, dtype=float).T)
    q = geom.quat_normalize(geom._qmul(poses.q, q_off))
    return PoseStream(poses.t, poses.p, q)


def segment_boundaries(imu_t, pose_t, segment_length=SEGMENT_LENGTH):
    """Pose indices of keyframes every ``segment_length`` seconds inside the
    IMU/pose overlap; -1 where no pose lands within a quarter period."""
    t_lo = max(imu_t[0], pose_t[0])
    t_hi = min(imu_t[-1], pose_t[-1])
    h = float(np.median(np.diff(pose_t)))
    i0 = int(np.searchsorted(pose_t, t_lo - 1e-9))
    t0 = pose_t[i0]
    n = int(np.floor((t_hi - t0) / segment_length + 1e-6))
    targets = t0 + segment_length * np.arange(n + 1)
    idx = np.clip(np.searchsorted(pose_t, targets), 1, len(pose_t) - 1)
    left = idx - 1
    nearest = np.where(np.abs(pose_t[left] - targets) <= np.abs(pose_t[idx] - targets), left, idx)
    ok = np.abs(pose_t[nearest] - targets) <= 0.25 * h
    return np.where(ok, nearest, -1)


def _velocities_by_chunk(poses, max_gap=3.0, **kw):
    """Velocity per pose, NaN where the pose sits in a chunk too short to
    differentiate. Chunks are separated by gaps > max_gap periods."""
    t = poses.t
    dt = np.diff(t)
    h = float(np.median(dt))
    cuts = np.flatnonzero(dt > max_gap * h) + 1
    v = np.full_like(poses.p, np.nan)
    for lo, hi in zip(np.r_[0, cuts], np.r_[cuts, len(t)]):
        if hi - lo >= 5:
            v[lo:hi] = estimate_velocities(poses[lo:hi], max_gap=max_gap, **kw).v
    return VelocityStream(t, v), cuts


def derive_bias_sequence(
    imu: ImuStream,
    poses: PoseStream,
    calib_R=None,
    gravity: GravityModel = None,
    *,
    segment_length=SEGMENT_LENGTH,
    chaining=True,
    scheme="rk4",
    increment="exact",
    iterations=1,
    velocity_cutoff=10.0,
    max_condition=1e8,
    min_valid_fraction=0.5,
):
    """One BiasRecord per segment of the IMU/pose overlap.

    With ``chaining`` the previous segment's solution is the linearization
    prior; otherwise every segment starts from zero bias. Segments that fail
    (gaps, ill-conditioning) are kept as invalid records.
    """
    gravity = gravity or GravityModel()
    poses_b = imu_frame_poses(poses, calib_R)
    vels, cuts = _velocities_by_chunk(poses_b, cutoff=velocity_cutoff)
    chunk_id = np.searchsorted(cuts, np.arange(len(poses_b)), side="right")
    bounds = segment_boundaries(imu.t, poses_b.t, segment_length)
    if len(bounds) < 2:
        raise InsufficientDataError("streams overlap by less than one segment")

    records = []
    prior = BiasEstimate()
    for k in range(len(bounds) - 1):
        j0, j1 = int(bounds[k]), int(bounds[k + 1])
        t_start = float(poses_b.t[j0]) if j0 >= 0 else float("nan")
        t_end = float(poses_b.t[j1]) if j1 >= 0 else float("nan")
        b0 = prior if chaining else BiasEstimate()
        b0 = BiasEstimate(b0.b_a, b0.b_w, k)
        try:
            if j0 < 0 or j1 < 0:
                raise GapError("no pose at segment boundary")
            if chunk_id[j0] != chunk_id[j1] or not np.all(np.isfinite(vels.v[[j0, j1]])):
                raise GapError("segment crosses a pose gap")
            seg = imu.window(t_start, t_end)
            nominal = nominal_deltas(poses_b[j0], poses_b[j1], vels[j0], vels[j1], gravity)
            est = b0
            for _ in range(max(1, iterations)):
                hat = preintegrate_segment(seg, est, scheme=scheme, increment=increment,
                                           segment_length=segment_length)
                if _ == 0:
                    H, r_before = segment_system(nominal, hat)
                est = solve_segment_bias(nominal, hat, max_condition=max_condition)
            H, r_last = segment_system(nominal, hat)
            db = est.vector - hat.bias.vector
            r_after = r_last - H @ db
            rec = BiasRecord(
                index=k, t_start=t_start, t_end=t_end,
                b_a=est.b_a.tolist(), b_w=est.b_w.tolist(),
                residual_alpha=float(np.linalg.norm(r_before[0:3])),
                residual_beta=float(np.linalg.norm(r_before[3:6])),
                residual_gamma=float(np.linalg.norm(r_before[6:9])),
                residual_after=float(np.linalg.norm(r_after[0:3]) + np.linalg.norm(r_after[3:6])),
                condition=float(np.linalg.cond(H)),
            )
            prior = est
        except DataQualityError as exc:
            rec = BiasRecord(index=k, t_start=t_start, t_end=t_end, b_a=None, b_w=None,
                             valid=False, reason=f"{type(exc).__name__}: {exc}")
            log.debug("segment %d flagged: %s", k, exc)
        records.append(rec)

    n_valid = sum(r.valid for r in records)
    if n_valid < min_valid_fraction * len(records):
        raise StreamError(f"only {n_valid}/{len(records)} segments valid")
    return records
