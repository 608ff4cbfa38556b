"""Position-delta error (Δα) before and after bias compensation.

For every 0.5 s segment, Δα = ‖α_nominal − α_integrated(b)‖ where α_nominal
comes from ground-truth poses and α_integrated re-integrates the raw IMU
samples with the compensating bias b. The reported metric is the fractional
reduction (Δα_before − Δα_after) / Δα_before of the segment means, with the
zero-bias integration as "before".
"""

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dataio, gtbias
from .errors import ConfigError, EmptyEvaluationError, InertiaKitError, UndefinedMetricError
from .learn.models import TARGET_CHANNELS
from .learn.train import InferenceSession
from .preint import SEGMENT_LENGTH, preintegrate_segment
from .streams import BiasEstimate

log = logging.getLogger(__name__)

BIAS_SOURCES = ("zero", "gt", "model")
_LOSS_GROUPS = {
    "accel_bias": [("accel", slice(0, 3))],
    "gyro_bias": [("gyro", slice(3, 6))],
    "joint": [("accel", slice(0, 3)), ("gyro", slice(3, 6))],
}


@dataclass
class EvalRecording:
    """A recording prepared for evaluation: streams plus its ground-truth bias records."""

    name: str
    participant_id: str
    activity: str
    imu_source: str
    imu: object
    poses: object
    records: list
    calib_R: np.ndarray = None
    segment_length: float = SEGMENT_LENGTH

    def __post_init__(self):
        self._nominal = None

    def nominal(self, gravity=None):
        """Nominal deltas per segment (None where the segment is invalid)."""
        if self._nominal is None:
            gravity = gravity or gtbias.GravityModel()
            poses_b = gtbias.imu_frame_poses(self.poses, self.calib_R)
            vels, _ = gtbias._velocities_by_chunk(poses_b)
            out = []
            for r in self.records:
                if not r.valid:
                    out.append(None)
                    continue
                j0 = int(np.argmin(np.abs(poses_b.t - r.t_start)))
                j1 = int(np.argmin(np.abs(poses_b.t - r.t_end)))
                out.append(gtbias.nominal_deltas(poses_b[j0], poses_b[j1], vels[j0], vels[j1], gravity))
            self._nominal = out
        return self._nominal

    @property
    def gt_bias(self):
        return np.array([r.vector for r in self.records])


def model_biases(rec: EvalRecording, models, *, feedback="teacher"):
    """Per-segment bias predictions, NaN where no prediction is available.

    ``models`` is a sequence of ModelArtifacts whose targets cover the
    channels to compensate (an accel and a gyro model, or one joint model).
    Channels without a model stay at zero. With ``feedback='teacher'`` the
    previous-step bias fed to the model is the ground-truth one; with
    ``'predicted'`` the model's own previous output is fed back.
    """
    if feedback not in ("teacher", "predicted"):
        raise ConfigError("feedback must be 'teacher' or 'predicted'")
    K = len(rec.records)
    out = np.full((K, 6), np.nan)
    have = np.zeros(K, dtype=bool)
    gt = rec.gt_bias
    filled = np.zeros((K, 6))
    first = True
    for art in models:
        ch = TARGET_CHANNELS[art.config.target]
        table = dataio.step_table(rec.imu, rec.records, art.config.window_w, name=rec.name)
        feats = art.norm.normalize_features(table.features)
        usable = table.usable
        session = InferenceSession(art)
        fed = gt.copy()
        for k in range(K):
            if not usable[k]:
                session.reset()
                continue
            prev = fed[k - 1]
            pred = session.step(feats[k], prev)
            filled[k, ch] = pred
            if feedback == "predicted":
                fed[k, ch] = pred
        have = usable if first else (have & usable)
        first = False
    out[have] = filled[have]
    return out


def segment_delta_alpha(rec: EvalRecording, biases, gravity=None):
    """Δα per segment for the given (K, 6) biases; NaN for invalid segments
    or rows of ``biases`` containing NaN. Re-integration uses the fourth-order
    scheme so that discretization stays well below the bias effect."""
    nominal = rec.nominal(gravity)
    biases = np.asarray(biases, dtype=float)
    out = np.full(len(rec.records), np.nan)
    for k, (r, nom) in enumerate(zip(rec.records, nominal)):
        if nom is None or not np.all(np.isfinite(biases[k])):
            continue
        seg = rec.imu.window(r.t_start, r.t_end)
        hat = preintegrate_segment(seg, BiasEstimate.from_vector(biases[k]), scheme="rk4",
                                   increment="exact", segment_length=rec.segment_length, compute_jacobian=False)
        out[k] = float(np.linalg.norm(nom.alpha - hat.alpha))
    return out


@dataclass
class DeltaAlpha:
    per_segment: np.ndarray
    aggregate: float
    count: int


def delta_alpha(rec: EvalRecording, source="zero", *, models=None, biases=None, mask=None,
                feedback="teacher", gravity=None) -> DeltaAlpha:
    """Δα per segment and its mean over valid segments for a bias source.

    ``source='zero'`` integrates raw measurements, ``'gt'`` compensates with
    the ground-truth bias records, ``'model'`` with ``models`` predictions.
    ``biases`` overrides the source with explicit (K, 6) values.
    """
    K = len(rec.records)
    if biases is None:
        if source == "zero":
            biases = np.zeros((K, 6))
        elif source == "gt":
            biases = rec.gt_bias
        elif source == "model":
            if not models:
                raise ConfigError("model bias source needs trained models")
            biases = model_biases(rec, models, feedback=feedback)
        else:
            raise ConfigError(f"bias source must be one of {BIAS_SOURCES}")
    per = segment_delta_alpha(rec, biases, gravity)
    if mask is not None:
        per = np.where(mask, per, np.nan)
    ok = np.isfinite(per)
    if not ok.any():
        raise EmptyEvaluationError(f"{rec.name}: no valid segments to evaluate")
    return DeltaAlpha(per, float(per[ok].mean()), int(ok.sum()))


def reduction(before, after):
    """(before − after) / before; undefined when before is zero."""
    if not before > 0:
        raise UndefinedMetricError(f"Δα before compensation is {before}; reduction undefined")
    return (before - after) / before


@dataclass
class MetricReport:
    split: str
    segment_count: int
    delta_alpha_before: float
    delta_alpha_after: float
    reduction: float
    delta_alpha_gt: float
    reduction_gt: float
    loss: dict
    per_recording: list
    fingerprint: dict
    per_segment: dict = field(default_factory=dict)

    def to_dict(self):
        return _jsonable(asdict(self))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (float, np.floating)):
        return float(x) if np.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def reduction_report(models, recordings, *, split="test", feedback="teacher", gravity=None) -> MetricReport:
    """Reduction metric over a set of recordings.

    Before/after/gt are averaged over the same segments: those with a valid
    ground truth and a model prediction.
    """
    if not recordings:
        raise EmptyEvaluationError("evaluated split is empty")
    models = list(models)
    befores, afters, gts, per_rec, per_seg = [], [], [], [], {}
    sq = {"accel": [], "gyro": []}
    for rec in recordings:
        pred = model_biases(rec, models, feedback=feedback)
        mask = np.all(np.isfinite(pred), axis=1)
        try:
            b = delta_alpha(rec, "zero", mask=mask, gravity=gravity)
            a = delta_alpha(rec, biases=pred, mask=mask, gravity=gravity)
            g = delta_alpha(rec, "gt", mask=mask, gravity=gravity)
        except EmptyEvaluationError:
            log.warning("%s: no evaluable segments", rec.name)
            continue
        ok = np.isfinite(b.per_segment) & np.isfinite(a.per_segment) & np.isfinite(g.per_segment)
        befores.append(b.per_segment[ok])
        afters.append(a.per_segment[ok])
        gts.append(g.per_segment[ok])
        err = pred[ok] - rec.gt_bias[ok]
        for art in models:
            for k, ch in _LOSS_GROUPS[art.config.target]:
                sq[k].append(np.sum(err[:, ch] ** 2, axis=1))
        t_mid = np.array([0.5 * (r.t_start + r.t_end) for r in rec.records])[ok]
        per_seg[rec.name] = {"t": t_mid, "before": b.per_segment[ok], "after": a.per_segment[ok],
                             "gt": g.per_segment[ok]}
        per_rec.append({"name": rec.name, "segments": int(ok.sum()),
                        "delta_alpha_before": float(b.per_segment[ok].mean()),
                        "delta_alpha_after": float(a.per_segment[ok].mean()),
                        "delta_alpha_gt": float(g.per_segment[ok].mean())})
    if not befores:
        raise EmptyEvaluationError("no valid segments in the evaluated split")
    before = float(np.concatenate(befores).mean())
    after = float(np.concatenate(afters).mean())
    gt = float(np.concatenate(gts).mean())
    loss = {f"mse_{k}": float(np.concatenate(v).mean()) for k, v in sq.items() if v}
    fp = hashlib.sha256()
    for art in models:
        fp.update(art.to_bytes())
    return MetricReport(
        split=split,
        segment_count=int(sum(len(x) for x in befores)),
        delta_alpha_before=before,
        delta_alpha_after=after,
        reduction=reduction(before, after),
        delta_alpha_gt=gt,
        reduction_gt=reduction(before, gt),
        loss=loss,
        per_recording=per_rec,
        fingerprint={"models_sha256": fp.hexdigest(), "recordings": [r.name for r in recordings],
                     "feedback": feedback},
        per_segment=per_seg,
    )


def write_plot_data(path, report: MetricReport):
    """Per-segment Δα series (before, after, gt) for external plotting."""
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["recording", "t", "delta_alpha_before", "delta_alpha_after", "delta_alpha_gt"])
        for name, s in report.per_segment.items():
            for row in zip(s["t"], s["before"], s["after"], s["gt"]):
                wr.writerow([name, *(repr(float(v)) for v in row)])


SWEEP_AXES = ("window_w", "history_L", "motion", "imu")
SWEEP_FIELDS = ["axis", "value", "variant", "status", "train_loss", "val_loss", "val_loss_phys",
                "reduction", "reduction_gt", "segments", "error"]


def _safe_cell(args):
    fn, axis, cell = args
    try:
        row = fn(cell)
        row.setdefault("status", "ok")
    except (InertiaKitError, FloatingPointError, ValueError) as exc:
        row = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    return {"axis": axis, **cell, **row}


def sweep(axis, cells, run_cell, *, jobs=1):
    """Run ``run_cell(cell) -> dict`` for every cell (a dict holding at least
    ``value``; plain values are wrapped). A failing cell becomes a row with
    ``status='failed'`` and the sweep continues. Rows come back in input
    order whatever ``jobs`` is."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
    tasks = [(run_cell, axis, c if isinstance(c, dict) else {"value": c}) for c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_safe_cell, tasks))
    return [_safe_cell(t) for t in tasks]


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=SWEEP_FIELDS, extrasaction="ignore", lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
