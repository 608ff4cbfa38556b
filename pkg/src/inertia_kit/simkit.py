"""Synthetic head-motion trajectories and IMU measurements with known biases.

The gait model is sinusoidal and deliberately non-physiological: forward
translation at constant speed, vertical bob at twice the stride frequency,
lateral and yaw sway at the stride frequency, small pitch/roll nods, and a
stepped ramp for stair climbing. Everything is analytic, so velocities,
accelerations and body rates are exact.
"""

from dataclasses import dataclass, field

import numpy as np

from . import geom
from .errors import InvalidInputError
from .gtbias import GravityModel
from .preint import NoiseModel
from .streams import ImuStream, PoseStream, VelocityStream

IMU_RATE = 200.0
POSE_RATE = 50.0

KINDS = ("walk", "run", "stairs", "static")
ACTIVITY_CODE = {"walk": "w", "run": "r", "stairs": "c", "static": "s"}
KIND_FROM_CODE = {v: k for k, v in ACTIVITY_CODE.items()}


@dataclass
class MotionProfile:
    kind: str = "walk"
    stride_hz: float = 0.9
    speed: float = 1.4
    head_bob_amp: float = 0.025
    head_yaw_amp: float = 0.12
    stair_rise: float = 0.0
    duration: float = 60.0
    seed: int = 0
    head_pitch_amp: float = 0.05
    head_roll_amp: float = 0.04
    lateral_amp: float = 0.02
    # randomises phases and scales amplitudes by up to ±jitter
    jitter: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown motion kind {self.kind!r}")
        if self.duration <= 0:
            raise InvalidInputError("duration must be > 0")
        for k in ("stride_hz", "speed", "head_bob_amp", "head_yaw_amp", "stair_rise",
                  "head_pitch_amp", "head_roll_amp", "lateral_amp", "jitter"):
            if getattr(self, k) < 0:
                raise InvalidInputError(f"{k} must be >= 0")

    @classmethod
    def preset(cls, kind, duration=60.0, seed=0, **overrides):
        base = {
            "walk": dict(stride_hz=0.9, speed=1.4, head_bob_amp=0.025, head_yaw_amp=0.12,
                         head_pitch_amp=0.05, head_roll_amp=0.04, lateral_amp=0.02),
            "run": dict(stride_hz=1.4, speed=3.0, head_bob_amp=0.04, head_yaw_amp=0.10,
                        head_pitch_amp=0.06, head_roll_amp=0.05, lateral_amp=0.025),
            "stairs": dict(stride_hz=0.8, speed=0.45, head_bob_amp=0.0, head_yaw_amp=0.08,
                           head_pitch_amp=0.08, head_roll_amp=0.03, lateral_amp=0.015,
                           stair_rise=0.17),
            "static": dict(stride_hz=0.0, speed=0.0, head_bob_amp=0.0, head_yaw_amp=0.0,
                           head_pitch_amp=0.0, head_roll_amp=0.0, lateral_amp=0.0, jitter=0.0),
        }[kind]
        base.update(overrides)
        return cls(kind=kind, duration=duration, seed=seed, **base)


@dataclass
class BiasTrajectory:
    """Bias evolution injected into synthetic measurements.

    ``random_walk`` integrates white noise of density ``walk_sigma_*`` (per
    sqrt(s)); ``sinusoid`` adds ``sin_amp_* · sin(2πt/sin_period)`` per axis
    with axis-dependent phases.
    """

    mode: str = "constant"
    b_a0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_w0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    walk_sigma_a: float = 0.0
    walk_sigma_w: float = 0.0
    sin_amp_a: float = 0.0
    sin_amp_w: float = 0.0
    sin_period: float = 30.0

    def __post_init__(self):
        if self.mode not in ("constant", "random_walk", "sinusoid"):
            raise InvalidInputError(f"unknown bias mode {self.mode!r}")
        self.b_a0 = np.asarray(self.b_a0, dtype=float).reshape(3)
        self.b_w0 = np.asarray(self.b_w0, dtype=float).reshape(3)

    def sample(self, t, rng):
        n = len(t)
        b_a = np.tile(self.b_a0, (n, 1))
        b_w = np.tile(self.b_w0, (n, 1))
        if self.mode == "random_walk":
            dt = np.diff(t, prepend=t[0])[:, None]
            steps = rng.standard_normal((n, 6)) * np.sqrt(dt)
            steps[0] = 0.0
            b_a += np.cumsum(steps[:, :3] * self.walk_sigma_a, axis=0)
            b_w += np.cumsum(steps[:, 3:] * self.walk_sigma_w, axis=0)
        elif self.mode == "sinusoid":
            phase = 2 * np.pi * t[:, None] / self.sin_period + np.array([0.0, 2.1, 4.2])
            b_a += self.sin_amp_a * np.sin(phase)
            b_w += self.sin_amp_w * np.sin(phase + 1.0)
        return b_a, b_w


@dataclass
class BiasTrack:
    t: np.ndarray
    b_a: np.ndarray
    b_w: np.ndarray

    def mean_over(self, t0, t1):
        m = (self.t >= t0) & (self.t <= t1)
        return np.r_[self.b_a[m].mean(axis=0), self.b_w[m].mean(axis=0)]


@dataclass
class Trajectory:
    """Helmet trajectory: poses/velocities at the pose rate plus exact
    kinematics (world position, velocity, acceleration, orientation, body
    rates) at the IMU rate."""

    poses: PoseStream
    velocities: VelocityStream
    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    acc_world: np.ndarray
    R: np.ndarray
    gyro_body: np.ndarray

    @property
    def accel_body(self):
        """Kinematic acceleration in the body frame (no gravity)."""
        return np.einsum("nji,nj->ni", self.R, self.acc_world)


def _sin(amp, freq, phase, t):
    w = 2 * np.pi * freq
    x = w * t + phase
    return amp * np.sin(x), amp * w * np.cos(x), -amp * w * w * np.sin(x)


def _kinematics(profile, t):
    rng = np.random.default_rng(profile.seed)
    phases = rng.uniform(0, 2 * np.pi, size=6)
    scale = 1.0 + profile.jitter * rng.uniform(-1, 1, size=6)
    f = profile.stride_hz

    x = (profile.speed * t, np.full_like(t, profile.speed), np.zeros_like(t))
    y = _sin(profile.lateral_amp * scale[0], f, phases[0], t)
    if profile.kind == "stairs" and f > 0:
        om = 2 * np.pi * 2 * f
        rate = profile.stair_rise * 2 * f
        # velocity rate·(1 − cos) never goes negative: one riser per step
        z = (rate * t - rate / om * np.sin(om * t), rate * (1 - np.cos(om * t)), rate * om * np.sin(om * t))
    else:
        z = _sin(profile.head_bob_amp * scale[1], 2 * f, phases[1], t)

    yaw = _sin(profile.head_yaw_amp * scale[2], f, phases[2], t)
    pitch = _sin(profile.head_pitch_amp * scale[3], 2 * f, phases[3], t)
    roll = _sin(profile.head_roll_amp * scale[4], f, phases[4], t)

    p = np.stack([x[0], y[0], z[0]], axis=1)
    v = np.stack([x[1], y[1], z[1]], axis=1)
    a = np.stack([x[2], y[2], z[2]], axis=1)
    R = geom.euler_zyx_to_rot(yaw[0], pitch[0], roll[0])
    ps, pc = np.sin(pitch[0]), np.cos(pitch[0])
    rs, rc = np.sin(roll[0]), np.cos(roll[0])
    dy, dp, dr = yaw[1], pitch[1], roll[1]
    gyro = np.stack([dr - dy * ps, dp * rc + dy * pc * rs, -dp * rs + dy * pc * rc], axis=1)
    return p, v, a, R, gyro


def synth_trajectory(profile: MotionProfile, imu_rate=IMU_RATE, pose_rate=POSE_RATE) -> Trajectory:
    ratio = imu_rate / pose_rate
    if abs(ratio - round(ratio)) > 1e-9:
        raise InvalidInputError("imu_rate must be an integer multiple of pose_rate")
    n = int(round(profile.duration * imu_rate)) + 1
    t = np.arange(n) / imu_rate
    p, v, a, R, gyro = _kinematics(profile, t)
    idx = np.arange(0, n, int(round(ratio)))
    q = geom.rot_to_quat(R[idx])
    poses = PoseStream(t[idx], p[idx], q)
    vels = VelocityStream(t[idx], v[idx])
    return Trajectory(poses, vels, t, p, v, a, R, gyro)


def synth_imu(
    traj: Trajectory,
    bias: BiasTrajectory = None,
    noise: NoiseModel = None,
    seed=0,
    gravity: GravityModel = None,
    mount=None,
):
    """Measurements â = a + b_a + Rᵀg + n_a and ω̂ = ω + b_w + n_w.

    ``mount`` is the IMU-to-helmet rotation; the IMU sits at the helmet origin.
    Returns ``(ImuStream, BiasTrack)``.
    """
    bias = bias or BiasTrajectory()
    noise = noise or NoiseModel()
    gravity = gravity or GravityModel()
    M = np.eye(3) if mount is None else geom.check_rotation(mount)
    rng = np.random.default_rng(seed)
    t = traj.t
    R_imu = traj.R @ M
    specific = traj.acc_world + gravity.g_w
    accel = np.einsum("nji,nj->ni", R_imu, specific)
    gyro = traj.gyro_body @ M
    b_a, b_w = bias.sample(t, rng)
    white = rng.standard_normal((len(t), 6))
    accel = accel + b_a + noise.sigma_a * white[:, :3]
    gyro = gyro + b_w + noise.sigma_w * white[:, 3:]
    return ImuStream(t, accel, gyro), BiasTrack(t, b_a, b_w)


def accel_bound(profile: MotionProfile, gravity: GravityModel = None):
    """Upper bound on |specific force| for a noise/bias-free stream."""
    gravity = gravity or GravityModel()
    s = 1.0 + profile.jitter
    w = 2 * np.pi * profile.stride_hz
    lat = profile.lateral_amp * s * w * w
    if profile.kind == "stairs":
        rate = profile.stair_rise * 2 * profile.stride_hz
        vert = rate * 2 * w
    else:
        vert = profile.head_bob_amp * s * (2 * w) ** 2
    return float(np.hypot(lat, vert) + np.linalg.norm(gravity.g_w))


NOISE_PRESETS = {
    "none": NoiseModel(),
    # consumer MEMS part inside a lidar, noisier
    "livox": NoiseModel(sigma_a=0.02, sigma_w=0.002, sigma_ba=2e-4, sigma_bw=2e-5),
    # tactical-grade reference unit
    "vectornav": NoiseModel(sigma_a=0.008, sigma_w=0.0008, sigma_ba=5e-5, sigma_bw=5e-6),
}
