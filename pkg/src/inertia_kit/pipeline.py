"""End-to-end stages shared by the command line and the notebooks:
simulate → ingest and derive ground-truth bias → window → train → evaluate."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataio, geom, gtbias, simkit
from .calib import calibrate
from .errors import ConfigError
from .evaluate import EvalRecording, reduction_report
from .learn import ModelConfig, TrainConfig, train

log = logging.getLogger(__name__)

TARGETS = ("accel_bias", "gyro_bias")


@dataclass
class SimSpec:
    """One synthetic recording: motion, bias scenario and sensor grade."""

    participant_id: str
    kind: str = "walk"
    duration: float = 60.0
    seed: int = 0
    noise: str = "livox"
    bias_mode: str = "sinusoid"
    accel_bias_scale: float = 0.1
    gyro_bias_scale: float = 0.01
    drift_amp_a: float = 0.03
    drift_amp_w: float = 0.005
    drift_sigma_a: float = 0.0
    drift_sigma_w: float = 0.0
    drift_period: float = 30.0
    mount_angle: float = 0.0


def simulate_recording(spec: SimSpec, out_dir):
    """Write one synthetic recording (with its true bias track) and return
    the manifest path. All randomness derives from ``spec.seed``."""
    if spec.noise not in simkit.NOISE_PRESETS:
        raise ConfigError(f"noise must be one of {tuple(simkit.NOISE_PRESETS)}")
    rng = np.random.default_rng([spec.seed, 1])
    profile = simkit.MotionProfile.preset(spec.kind, duration=spec.duration, seed=spec.seed)
    traj = simkit.synth_trajectory(profile)
    bias = simkit.BiasTrajectory(
        mode=spec.bias_mode,
        b_a0=rng.uniform(-1, 1, 3) * spec.accel_bias_scale,
        b_w0=rng.uniform(-1, 1, 3) * spec.gyro_bias_scale,
        walk_sigma_a=spec.drift_sigma_a, walk_sigma_w=spec.drift_sigma_w,
        sin_amp_a=spec.drift_amp_a, sin_amp_w=spec.drift_amp_w, sin_period=spec.drift_period,
    )
    mount = None
    if spec.mount_angle:
        axis = rng.standard_normal(3)
        mount = geom.rot_exp(axis / np.linalg.norm(axis) * spec.mount_angle)
    imu, track = simkit.synth_imu(traj, bias, simkit.NOISE_PRESETS[spec.noise], seed=spec.seed, mount=mount)
    source = spec.noise if spec.noise in dataio.IMU_SOURCES else "synthetic"
    manifest = dataio.RecordingManifest(
        participant_id=spec.participant_id,
        activity=simkit.ACTIVITY_CODE[spec.kind] if spec.kind != "static" else "w",
        imu_source=source,
        meta={"simulated": True, "kind": spec.kind, "seed": spec.seed, "noise": spec.noise,
              "mount_R": None if mount is None else mount.tolist()},
    )
    return dataio.write_recording(Path(out_dir), manifest, imu, traj.poses, track)


def resolve_calibration(manifest, imu, poses, calibration="identity"):
    """``identity``, ``estimate`` (hand-eye from the recording), ``truth``
    (simulated mount from the manifest) or a 3x3 matrix."""
    if isinstance(calibration, str):
        if calibration == "identity":
            return None
        if calibration == "estimate":
            return calibrate(imu, poses).R
        if calibration == "truth":
            m = manifest.meta.get("mount_R")
            return None if m is None else np.asarray(m).T
        raise ConfigError(f"unknown calibration {calibration!r}")
    return geom.check_rotation(np.asarray(calibration, dtype=float))


def prepare_recording(manifest, *, calibration="identity", gravity=None, chaining=True,
                      iterations=1) -> EvalRecording:
    if not isinstance(manifest, dataio.RecordingManifest):
        manifest = dataio.RecordingManifest.load(manifest)
    imu, poses, _ = dataio.ingest(manifest)
    R = resolve_calibration(manifest, imu, poses, calibration)
    records = gtbias.derive_bias_sequence(imu, poses, R, gravity, chaining=chaining, iterations=iterations)
    return EvalRecording(manifest.name, manifest.participant_id, manifest.activity, manifest.imu_source,
                         imu, poses, records, R)


def step_tables(recordings, w):
    return [dataio.step_table(r.imu, r.records, w, name=r.name, participant_id=r.participant_id,
                              activity=r.activity, imu_source=r.imu_source) for r in recordings]


def windows(tables, L, overlap, norm):
    seqs, gaps = [], []
    for t in tables:
        s, g = dataio.build_windows(t, L, overlap, norm)
        seqs += s
        gaps += g
    return seqs, gaps


def default_overlap(variant):
    return 0.5 if variant == "recurrent" else 0.0


def train_models(train_recs, val_recs, mc: ModelConfig, tc: TrainConfig, *, targets=TARGETS, overlap=None,
                 checkpoint_dir=None, resume=False):
    """Train one model per target on shared windows and normalization.

    Returns ``{target: TrainResult}``.
    """
    overlap = default_overlap(mc.variant) if overlap is None else overlap
    tr_tables = step_tables(train_recs, mc.window_w)
    norm = dataio.NormalizationStats.fit(tr_tables)
    tr_seqs, _ = windows(tr_tables, mc.history_len, overlap, norm)
    va_seqs, _ = windows(step_tables(val_recs, mc.window_w), mc.history_len, 0.0, norm)
    results = {}
    for target in targets:
        cfg = ModelConfig.from_dict({**mc.to_dict(), "target": target})
        ckpt = None if checkpoint_dir is None else Path(checkpoint_dir) / f"{target}.ckpt"
        results[target] = train(tr_seqs, va_seqs, cfg, tc, norm, checkpoint_path=ckpt, resume=resume)
    return results


def evaluate_models(results, test_recs, *, split="test", feedback="teacher"):
    arts = [r.artifact for r in results.values()] if isinstance(results, dict) else list(results)
    return reduction_report(arts, test_recs, split=split, feedback=feedback)
