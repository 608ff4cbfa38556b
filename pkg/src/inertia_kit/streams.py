"""Columnar containers for timestamped sensor streams and bias estimates."""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidStreamError


class ImuSample(NamedTuple):
    t: float
    accel: np.ndarray
    gyro: np.ndarray


class PoseSample(NamedTuple):
    t: float
    p: np.ndarray
    q: np.ndarray


class VelocitySample(NamedTuple):
    t: float
    v: np.ndarray


def _as_columns(t, *arrays):
    t = np.ascontiguousarray(t, dtype=float)
    out = [np.ascontiguousarray(a, dtype=float) for a in arrays]
    for a in out:
        if a.shape[0] != t.shape[0]:
            raise InvalidStreamError("stream columns have mismatched lengths")
    return t, out


def check_monotonic(t, name="stream"):
    d = np.diff(t)
    if np.any(d <= 0.0):
        i = int(np.argmax(d <= 0.0))
        raise InvalidStreamError(f"{name} timestamps not strictly increasing at index {i + 1}")


@dataclass
class ImuStream:
    """Accelerometer [m/s²] and gyroscope [rad/s] readings in the IMU body frame."""

    t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray

    def __post_init__(self):
        self.t, (self.accel, self.gyro) = _as_columns(self.t, self.accel, self.gyro)

    def __len__(self):
        return len(self.t)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return ImuSample(float(self.t[idx]), self.accel[idx], self.gyro[idx])
        return ImuStream(self.t[idx], self.accel[idx], self.gyro[idx])

    @property
    def rate(self):
        return 1.0 / float(np.median(np.diff(self.t)))

    def window(self, t0, t1, *, interpolate=True):
        """Samples covering [t0, t1], with linearly interpolated end samples
        inserted when t0/t1 fall between measurements."""
        i0 = int(np.searchsorted(self.t, t0, side="left"))
        i1 = int(np.searchsorted(self.t, t1, side="right"))
        t = self.t[i0:i1]
        acc = self.accel[i0:i1]
        gyr = self.gyro[i0:i1]
        if interpolate:
            tol = 1e-9
            if len(t) == 0 or t[0] > t0 + tol:
                if i0 == 0:
                    raise InvalidStreamError("window starts before the stream")
                a0, g0 = self._interp(t0, i0 - 1)
                t, acc, gyr = np.r_[t0, t], np.vstack([a0, acc]), np.vstack([g0, gyr])
            if t[-1] < t1 - tol:
                if i1 >= len(self.t):
                    raise InvalidStreamError("window ends after the stream")
                a1, g1 = self._interp(t1, i1 - 1)
                t, acc, gyr = np.r_[t, t1], np.vstack([acc, a1]), np.vstack([gyr, g1])
        return ImuStream(t, acc, gyr)

    def _interp(self, tq, i):
        s = (tq - self.t[i]) / (self.t[i + 1] - self.t[i])
        return (
            (1 - s) * self.accel[i] + s * self.accel[i + 1],
            (1 - s) * self.gyro[i] + s * self.gyro[i + 1],
        )


@dataclass
class PoseStream:
    """World-frame positions [m] and body-to-world orientations (w, x, y, z)."""

    t: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.t, (self.p, self.q) = _as_columns(self.t, self.p, self.q)

    def __len__(self):
        return len(self.t)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return PoseSample(float(self.t[idx]), self.p[idx], self.q[idx])
        return PoseStream(self.t[idx], self.p[idx], self.q[idx])

    @property
    def rate(self):
        return 1.0 / float(np.median(np.diff(self.t)))


@dataclass
class VelocityStream:
    t: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.t, (self.v,) = _as_columns(self.t, self.v)

    def __len__(self):
        return len(self.t)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return VelocitySample(float(self.t[idx]), self.v[idx])
        return VelocityStream(self.t[idx], self.v[idx])


@dataclass
class BiasEstimate:
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_w: np.ndarray = field(default_factory=lambda: np.zeros(3))
    segment_index: int = -1

    def __post_init__(self):
        self.b_a = np.asarray(self.b_a, dtype=float).reshape(3)
        self.b_w = np.asarray(self.b_w, dtype=float).reshape(3)

    @classmethod
    def from_vector(cls, vec, segment_index=-1):
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:3], vec[3:6], segment_index)

    @property
    def vector(self):
        return np.concatenate([self.b_a, self.b_w])

    def check_bounds(self, max_accel=5.0, max_gyro=1.0):
        return bool(
            np.all(np.isfinite(self.vector))
            and np.linalg.norm(self.b_a) <= max_accel
            and np.linalg.norm(self.b_w) <= max_gyro
        )
