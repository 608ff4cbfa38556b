"""Recording files, ingestion, per-step feature pooling, windowing and splits.

On-disk layout of one recording (all paths relative to the manifest)::

    manifest.json   participant, activity, imu source, file names, rates
    imu.csv         t,ax,ay,az,gx,gy,gz
    pose.csv        t,px,py,pz,qw,qx,qy,qz
    truth_bias.csv  t,bax,bay,baz,bwx,bwy,bwz   (synthetic recordings only)
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, InsufficientOverlapError, InvalidStreamError, ShapeError
from .streams import ImuStream, PoseStream

log = logging.getLogger(__name__)

IMU_HEADER = ["t", "ax", "ay", "az", "gx", "gy", "gz"]
POSE_HEADER = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"]
TRUTH_HEADER = ["t", "bax", "bay", "baz", "bwx", "bwy", "bwz"]

ACTIVITIES = ("w", "r", "c")
IMU_SOURCES = ("livox", "vectornav", "synthetic")
TOPICS = {"livox": "/livox/imu", "vectornav": "/vectorNAV/IMU", "pose": "/vicon/helmet"}
DEFAULT_RATES = {"imu": 200.0, "pose": 50.0}
MIN_OVERLAP = 10.0

_ACTIVITY_ALIASES = {"walk": "w", "run": "r", "stairs": "c", "stair": "c", "climb": "c"}


@dataclass
class RecordingManifest:
    participant_id: str
    activity: str
    imu_source: str
    imu_path: str = "imu.csv"
    pose_path: str = "pose.csv"
    truth_path: str = None
    rates: dict = field(default_factory=lambda: dict(DEFAULT_RATES))
    meta: dict = field(default_factory=dict)
    root: Path = None

    def __post_init__(self):
        if self.activity not in ACTIVITIES:
            raise ConfigError(f"activity must be one of {ACTIVITIES}, got {self.activity!r}")
        if self.imu_source not in IMU_SOURCES:
            raise ConfigError(f"imu_source must be one of {IMU_SOURCES}, got {self.imu_source!r}")

    @property
    def name(self):
        return f"{self.participant_id}_{self.activity}" + (f"_{self.imu_source}" if self.imu_source != "synthetic" else "")

    def resolve(self, rel):
        return Path(rel) if self.root is None else Path(self.root) / rel

    def to_dict(self):
        files = {"imu": self.imu_path, "pose": self.pose_path}
        if self.truth_path:
            files["truth_bias"] = self.truth_path
        return {
            "participant_id": self.participant_id,
            "activity": self.activity,
            "imu_source": self.imu_source,
            "files": files,
            "rates": self.rates,
            "meta": self.meta,
        }

    def save(self, path):
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        self.root = path.parent

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            d = json.loads(path.read_text())
            files = d["files"]
            return cls(
                participant_id=str(d["participant_id"]),
                activity=d["activity"],
                imu_source=d["imu_source"],
                imu_path=files["imu"],
                pose_path=files["pose"],
                truth_path=files.get("truth_bias"),
                rates={**DEFAULT_RATES, **d.get("rates", {})},
                meta=d.get("meta", {}),
                root=path.parent,
            )
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise FormatError(f"bad manifest {path}: {exc}") from exc


def _write_csv(path, header, cols):
    data = np.column_stack(cols)
    # %.17g round-trips float64 exactly
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(header), comments="")


def _read_csv(path, header):
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing file {path}")
    with open(path) as f:
        first = f.readline().strip()
    if first.split(",") != header:
        raise FormatError(f"{path}: header {first!r} != {','.join(header)!r}")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.size == 0:
        return np.zeros((0, len(header)))
    if data.shape[1] != len(header):
        raise FormatError(f"{path}: expected {len(header)} columns, got {data.shape[1]}")
    return data


def write_imu_csv(path, imu: ImuStream):
    _write_csv(path, IMU_HEADER, [imu.t, imu.accel, imu.gyro])


def read_imu_csv(path) -> ImuStream:
    d = _read_csv(path, IMU_HEADER)
    return ImuStream(d[:, 0], d[:, 1:4], d[:, 4:7])


def write_pose_csv(path, poses: PoseStream):
    _write_csv(path, POSE_HEADER, [poses.t, poses.p, poses.q])


def read_pose_csv(path) -> PoseStream:
    d = _read_csv(path, POSE_HEADER)
    return PoseStream(d[:, 0], d[:, 1:4], d[:, 4:8])


def write_truth_csv(path, track):
    _write_csv(path, TRUTH_HEADER, [track.t, track.b_a, track.b_w])


def read_truth_csv(path):
    from .simkit import BiasTrack

    d = _read_csv(path, TRUTH_HEADER)
    return BiasTrack(d[:, 0], d[:, 1:4], d[:, 4:7])


def write_recording(directory, manifest: RecordingManifest, imu: ImuStream, poses: PoseStream, truth=None):
    """Write a recording in the on-disk schema; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_imu_csv(directory / manifest.imu_path, imu)
    write_pose_csv(directory / manifest.pose_path, poses)
    if truth is not None:
        manifest.truth_path = manifest.truth_path or "truth_bias.csv"
        write_truth_csv(directory / manifest.truth_path, truth)
    path = directory / "manifest.json"
    manifest.save(path)
    return path


def _dedup(t, name):
    d = np.diff(t)
    if np.any(d < 0):
        i = int(np.argmax(d < 0)) + 1
        raise InvalidStreamError(f"{name} timestamps decrease at row {i}")
    keep = np.r_[True, d > 0]
    return keep, int(np.sum(~keep))


@dataclass
class IngestReport:
    duplicates_imu: int = 0
    duplicates_pose: int = 0
    t_start: float = 0.0
    t_end: float = 0.0

    @property
    def warnings(self):
        return self.duplicates_imu + self.duplicates_pose


def ingest(manifest, *, min_overlap=MIN_OVERLAP):
    """Load, de-duplicate and clip a recording's streams to their common span.

    Returns ``(imu, poses, report)``.
    """
    if not isinstance(manifest, RecordingManifest):
        manifest = RecordingManifest.load(manifest)
    imu = read_imu_csv(manifest.resolve(manifest.imu_path))
    poses = read_pose_csv(manifest.resolve(manifest.pose_path))
    if len(imu) < 2 or len(poses) < 2:
        raise InsufficientOverlapError("empty stream")
    for name, s in (("imu", imu), ("pose", poses)):
        cols = [s.t] + ([s.accel, s.gyro] if name == "imu" else [s.p, s.q])
        if not all(np.all(np.isfinite(c)) for c in cols):
            raise FormatError(f"{name} stream contains non-finite values")

    keep_i, dup_i = _dedup(imu.t, "imu")
    keep_p, dup_p = _dedup(poses.t, "pose")
    if dup_i or dup_p:
        log.warning("%s: dropped %d duplicate imu and %d duplicate pose timestamps", manifest.name, dup_i, dup_p)
    imu = imu[keep_i]
    poses = poses[keep_p]

    t0 = max(imu.t[0], poses.t[0])
    t1 = min(imu.t[-1], poses.t[-1])
    if t1 - t0 < min_overlap:
        raise InsufficientOverlapError(f"streams overlap for {max(t1 - t0, 0):.2f} s < {min_overlap} s")
    mi = (imu.t >= t0) & (imu.t <= t1)
    mp = (poses.t >= t0) & (poses.t <= t1)
    if not mi.all():
        imu = imu[mi]
    if not mp.all():
        poses = poses[mp]

    for key, s in (("imu", imu), ("pose", poses)):
        expected = manifest.rates.get(key)
        if expected and abs(s.rate - expected) > 0.05 * expected:
            log.warning("%s: %s rate %.1f Hz differs from manifest %.1f Hz", manifest.name, key, s.rate, expected)
    return imu, poses, IngestReport(dup_i, dup_p, float(t0), float(t1))


def discover_manifests(root):
    return sorted(Path(root).rglob("manifest.json"))


# --- bag-export conversion -------------------------------------------------

_IMU_COLUMNS = {
    "t": ("field.header.stamp", "%time", "header.stamp", "t"),
    "ax": ("field.linear_acceleration.x", "linear_acceleration.x"),
    "ay": ("field.linear_acceleration.y", "linear_acceleration.y"),
    "az": ("field.linear_acceleration.z", "linear_acceleration.z"),
    "gx": ("field.angular_velocity.x", "angular_velocity.x"),
    "gy": ("field.angular_velocity.y", "angular_velocity.y"),
    "gz": ("field.angular_velocity.z", "angular_velocity.z"),
}
_POSE_COLUMNS = {
    "t": ("field.header.stamp", "%time", "header.stamp", "t"),
    "px": ("field.transform.translation.x", "field.pose.position.x", "transform.translation.x", "pose.position.x"),
    "py": ("field.transform.translation.y", "field.pose.position.y", "transform.translation.y", "pose.position.y"),
    "pz": ("field.transform.translation.z", "field.pose.position.z", "transform.translation.z", "pose.position.z"),
    "qw": ("field.transform.rotation.w", "field.pose.orientation.w", "transform.rotation.w", "pose.orientation.w"),
    "qx": ("field.transform.rotation.x", "field.pose.orientation.x", "transform.rotation.x", "pose.orientation.x"),
    "qy": ("field.transform.rotation.y", "field.pose.orientation.y", "transform.rotation.y", "pose.orientation.y"),
    "qz": ("field.transform.rotation.z", "field.pose.orientation.z", "transform.rotation.z", "pose.orientation.z"),
}


def _read_topic_export(path, columns):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise FormatError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    idx = {}
    for key, names in columns.items():
        hit = next((header.index(n) for n in names if n in header), None)
        if hit is None:
            raise FormatError(f"{path}: no column for {key} (tried {names})")
        idx[key] = hit
    data = np.array([[float(r[idx[k]]) for k in columns] for r in rows[1:] if r], dtype=float)
    # ROS stamps exported as integer nanoseconds
    if len(data) and np.median(data[:, 0]) > 1e12:
        data[:, 0] *= 1e-9
    return data


def convert_topic_export(imu_csv, pose_csv, out_dir, participant_id, activity, imu_source):
    """Convert per-topic CSV exports of a recording bag (``rostopic echo -p``
    style: ``/livox/imu`` or ``/vectorNAV/IMU`` and ``/vicon/helmet``) into the
    recording schema. Returns the manifest path."""
    imu_d = _read_topic_export(imu_csv, _IMU_COLUMNS)
    pose_d = _read_topic_export(pose_csv, _POSE_COLUMNS)
    imu = ImuStream(imu_d[:, 0], imu_d[:, 1:4], imu_d[:, 4:7])
    poses = PoseStream(pose_d[:, 0], pose_d[:, 1:4], pose_d[:, 4:8])
    manifest = RecordingManifest(
        participant_id=participant_id,
        activity=_ACTIVITY_ALIASES.get(activity, activity),
        imu_source=imu_source,
        meta={"topics": {"imu": TOPICS.get(imu_source, ""), "pose": TOPICS["pose"]}},
    )
    return write_recording(out_dir, manifest, imu, poses)


# --- per-step features and windows -----------------------------------------

def pool_samples(samples, w):
    """Mean-pool ``(n, c)`` samples into ``w`` rows using contiguous chunks of
    near-equal size (sizes differ by at most one)."""
    samples = np.asarray(samples, dtype=float)
    n = len(samples)
    if n < w:
        raise ShapeError(f"cannot pool {n} samples into {w} rows")
    edges = (np.arange(w + 1) * n) // w
    csum = np.vstack([np.zeros((1, samples.shape[1])), np.cumsum(samples, axis=0)])
    return (csum[edges[1:]] - csum[edges[:-1]]) / np.diff(edges)[:, None]


@dataclass
class StepTable:
    """Per-step pooled IMU features and ground-truth biases of one recording."""

    name: str
    participant_id: str
    activity: str
    imu_source: str
    step_index: np.ndarray
    t_start: np.ndarray
    t_end: np.ndarray
    features: np.ndarray  # (K, w, 6) raw pooled accel+gyro
    bias: np.ndarray      # (K, 6), NaN where invalid
    valid: np.ndarray     # (K,)
    reasons: list = field(default_factory=list)

    def __len__(self):
        return len(self.step_index)

    @property
    def w(self):
        return self.features.shape[1]

    @property
    def usable(self):
        """Steps with a valid target and a valid previous bias."""
        return self.valid & np.r_[False, self.valid[:-1]]


def step_table(imu: ImuStream, records, w, *, name="", participant_id="", activity="w", imu_source="synthetic") -> StepTable:
    K = len(records)
    feats = np.full((K, w, 6), np.nan)
    bias = np.full((K, 6), np.nan)
    valid = np.zeros(K, dtype=bool)
    reasons = []
    raw = np.hstack([imu.accel, imu.gyro])
    for k, r in enumerate(records):
        reason = r.reason if not r.valid else ""
        if r.valid:
            i0 = int(np.searchsorted(imu.t, r.t_start - 1e-9))
            i1 = int(np.searchsorted(imu.t, r.t_end - 1e-9))
            if i1 - i0 >= w:
                feats[k] = pool_samples(raw[i0:i1], w)
                bias[k] = r.vector
                valid[k] = True
            else:
                reason = f"only {i1 - i0} samples for w={w}"
        reasons.append(reason)
    return StepTable(
        name=name, participant_id=participant_id, activity=activity, imu_source=imu_source,
        step_index=np.array([r.index for r in records], dtype=int),
        t_start=np.array([r.t_start for r in records], dtype=float),
        t_end=np.array([r.t_end for r in records], dtype=float),
        features=feats, bias=bias, valid=valid, reasons=reasons,
    )


@dataclass
class NormalizationStats:
    feature_mean: np.ndarray
    feature_std: np.ndarray
    bias_mean: np.ndarray
    bias_std: np.ndarray

    @classmethod
    def fit(cls, tables):
        feats = np.concatenate([t.features[t.valid].reshape(-1, 6) for t in tables])
        bias = np.concatenate([t.bias[t.valid] for t in tables])
        if len(feats) == 0:
            raise ConfigError("no valid steps to fit normalization statistics")

        def std(x):
            s = x.std(axis=0)
            return np.where(s > 1e-12, s, 1.0)

        return cls(feats.mean(axis=0), std(feats), bias.mean(axis=0), std(bias))

    def normalize_features(self, x):
        return (x - self.feature_mean) / self.feature_std

    def denormalize_features(self, x):
        return x * self.feature_std + self.feature_mean

    def normalize_bias(self, b):
        return (b - self.bias_mean) / self.bias_std

    def denormalize_bias(self, b, channels=slice(0, 6)):
        return b * self.bias_std[channels] + self.bias_mean[channels]

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("feature_mean", "feature_std", "bias_mean", "bias_std")}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.asarray(v, dtype=float) for k, v in d.items()})


@dataclass
class SegmentWindow:
    features: np.ndarray   # (w, 6) normalized
    prev_bias: np.ndarray  # (6,)
    target_bias: np.ndarray
    step_index: int


@dataclass
class WindowSequence:
    """L consecutive steps of normalized features with raw previous/target biases."""

    features: np.ndarray    # (L, w, 6)
    prev_bias: np.ndarray   # (L, 6)
    target_bias: np.ndarray  # (L, 6)
    step_index: np.ndarray  # (L,)
    recording: str = ""
    overlap_fraction: float = 0.0

    def __len__(self):
        return len(self.step_index)

    def __getitem__(self, i):
        return SegmentWindow(self.features[i], self.prev_bias[i], self.target_bias[i], int(self.step_index[i]))

    @property
    def windows(self):
        return [self[i] for i in range(len(self))]


def contiguous_runs(mask):
    """(start, stop) of maximal True runs."""
    m = np.r_[False, np.asarray(mask, dtype=bool), False]
    d = np.diff(m.astype(int))
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def window_count(n_steps, L, overlap):
    stride = sequence_stride(L, overlap)
    return 0 if n_steps < L else (n_steps - L) // stride + 1


def sequence_stride(L, overlap):
    if overlap not in (0, 0.0, 0.5):
        raise ConfigError("overlap must be 0 or 0.5")
    return max(1, int(round(L * (1 - overlap))))


def build_windows(table: StepTable, L, overlap, norm: NormalizationStats):
    """Cut a step table into WindowSequences of L usable consecutive steps.

    Returns ``(sequences, gaps)`` where ``gaps`` lists one marker dict per
    unusable step.
    """
    stride = sequence_stride(L, overlap)
    usable = table.usable
    gaps = [
        {"type": "gap", "recording": table.name, "step_index": int(table.step_index[k]),
         "reason": table.reasons[k] or ("first step" if k == 0 else "previous step invalid")}
        for k in np.flatnonzero(~usable)
    ]
    feats = norm.normalize_features(table.features)
    prev = np.vstack([np.full((1, 6), np.nan), table.bias[:-1]])
    seqs = []
    for lo, hi in contiguous_runs(usable):
        for s in range(lo, hi - L + 1, stride):
            sl = slice(s, s + L)
            seqs.append(WindowSequence(feats[sl], prev[sl], table.bias[sl], table.step_index[sl],
                                       table.name, float(overlap)))
    return seqs, gaps


def write_gaps_jsonl(path, gaps):
    with open(path, "w") as f:
        for g in gaps:
            f.write(json.dumps(g, sort_keys=True) + "\n")


# --- splits -----------------------------------------------------------------

@dataclass
class Split:
    train: list
    val: list
    test: list


_MOTION = {"walk": "w", "run": "r", "stairs": "c", "stair": "c", "w": "w", "r": "r", "c": "c"}


def split(dataset, policy):
    """Partition recordings (anything with participant_id/activity/imu_source).

    Policies: ``holdout:D[,E...]`` (held-out participants form val and test),
    ``motion:<walk|run|stairs>-only`` (train on one activity, val/test on the
    others), ``imu:<source>-only`` (train on one IMU, val/test on the rest).
    """
    items = list(dataset)
    try:
        kind, arg = policy.split(":", 1)
    except ValueError:
        raise ConfigError(f"bad split policy {policy!r}") from None
    if kind == "holdout":
        ids = [s.strip() for s in arg.split(",") if s.strip()]
        present = {r.participant_id for r in items}
        missing = [i for i in ids if i not in present]
        if missing:
            raise ConfigError(f"holdout participant(s) {missing} not in dataset")
        held = [r for r in items if r.participant_id in ids]
        train = [r for r in items if r.participant_id not in ids]
    elif kind == "motion":
        code = _MOTION.get(arg.removesuffix("-only"))
        if code is None:
            raise ConfigError(f"unknown motion {arg!r}")
        train = [r for r in items if r.activity == code]
        held = [r for r in items if r.activity != code]
    elif kind == "imu":
        src = arg.removesuffix("-only")
        train = [r for r in items if r.imu_source == src]
        held = [r for r in items if r.imu_source != src]
    else:
        raise ConfigError(f"unknown split policy {policy!r}")
    if not train or not held:
        raise ConfigError(f"split {policy!r} leaves an empty partition")
    return Split(train=train, val=held, test=held)


def windows_from_stream(imu: ImuStream, records, w, L, overlap, norm: NormalizationStats, **meta):
    """Pool an IMU stream against its bias records and cut windows in one go."""
    return build_windows(step_table(imu, records, w, **meta), L, overlap, norm)
