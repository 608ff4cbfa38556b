"""Command line entry point: ``inertia-kit <command> --config run.json``.

Every command writes under ``--out`` (default: the config's ``out``) with
stable relative paths and snapshots its resolved configuration there.
Exit codes: 0 ok, 2 configuration/usage, 3 data quality, 4 numerical.
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import dataio, gtbias, pipeline
from .calib import calibrate
from .errors import ConfigError, InertiaKitError
from .evaluate import EvalRecording, reduction_report, sweep, write_plot_data, write_sweep_csv
from .learn import ModelArtifact, write_loss_curve

log = logging.getLogger("inertia_kit")


# --- helpers ------------------------------------------------------------------

def _dump_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _gravity(cfg):
    return gtbias.GravityModel(cfg.data.gravity, enabled=cfg.data.gravity_enabled)


def _manifest_paths(cfg):
    paths = []
    for entry in cfg.data.manifests:
        p = cfg.path(entry)
        paths += dataio.discover_manifests(p) if p.is_dir() else [p]
    if not cfg.data.manifests:
        paths = dataio.discover_manifests(cfg.out_dir / "recordings")
    if not paths:
        raise ConfigError("no recordings: run `simulate` first or list data.manifests")
    return paths


def _calibration_for(cfg, manifest, imu, poses):
    cal = cfg.data.calibration
    if cal == "estimate":
        f = cfg.out_dir / "calibration" / f"{manifest.name}.json"
        if f.exists():
            return np.asarray(json.loads(f.read_text())["R"])
    if isinstance(cal, str) and cal not in ("identity", "estimate", "truth"):
        return np.asarray(json.loads(cfg.path(cal).read_text())["R"])
    return pipeline.resolve_calibration(manifest, imu, poses, cal)


def _derive_one(cfg, path):
    manifest = dataio.RecordingManifest.load(path)
    imu, poses, _ = dataio.ingest(manifest)
    R = _calibration_for(cfg, manifest, imu, poses)
    records = gtbias.derive_bias_sequence(
        imu, poses, R, _gravity(cfg), segment_length=cfg.data.segment_length,
        chaining=cfg.data.chaining, iterations=cfg.data.iterations)
    return manifest, imu, poses, R, records


def _map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def load_recordings(cfg, jobs=1):
    """Prepared recordings in manifest order, reusing bias files from
    ``derive-bias`` when present."""
    out = []
    todo = []
    for path in _manifest_paths(cfg):
        manifest = dataio.RecordingManifest.load(path)
        bias_file = cfg.out_dir / "bias" / f"{manifest.name}.jsonl"
        if bias_file.exists():
            imu, poses, _ = dataio.ingest(manifest)
            R = _calibration_for(cfg, manifest, imu, poses)
            out.append(EvalRecording(manifest.name, manifest.participant_id, manifest.activity,
                                     manifest.imu_source, imu, poses, gtbias.read_bias_jsonl(bias_file), R,
                                     cfg.data.segment_length))
        else:
            out.append(None)
            todo.append((len(out) - 1, path))
    for (i, _), (manifest, imu, poses, R, records) in zip(todo, _map(partial(_derive_one, cfg), [p for _, p in todo], jobs)):
        out[i] = EvalRecording(manifest.name, manifest.participant_id, manifest.activity, manifest.imu_source,
                               imu, poses, records, R, cfg.data.segment_length)
    return out


def _partitions(cfg, recs):
    parts = dataio.split(recs, cfg.split)
    train, val = parts.train, parts.val
    if cfg.validation:
        sub = dataio.split(train, cfg.validation)
        train, val = sub.train, sub.test
    return train, val, parts.test


# --- commands -----------------------------------------------------------------

def cmd_simulate(cfg, args):
    sim = cfg.simulate
    root = cfg.out_dir / "recordings"
    written = []
    i = 0
    for pid in sim.participants:
        for kind in sim.kinds:
            for noise in sim.noise:
                spec = pipeline.SimSpec(
                    participant_id=pid, kind=kind, duration=sim.duration, seed=cfg.seed * 10000 + i,
                    noise=noise, bias_mode=sim.bias_mode, accel_bias_scale=sim.accel_bias_scale,
                    gyro_bias_scale=sim.gyro_bias_scale, drift_amp_a=sim.drift_amp_a, drift_amp_w=sim.drift_amp_w,
                    drift_sigma_a=sim.drift_sigma_a, drift_sigma_w=sim.drift_sigma_w,
                    drift_period=sim.drift_period, mount_angle=sim.mount_angle)
                code = pipeline.simkit.ACTIVITY_CODE[kind]
                name = f"{pid}_{code}" + (f"_{noise}" if noise in dataio.IMU_SOURCES else "")
                written.append(pipeline.simulate_recording(spec, root / name))
                i += 1
    _dump_json(root / "index.json", [str(p.relative_to(cfg.out_dir)) for p in written])
    print(f"wrote {len(written)} recordings to {root}")


def cmd_calibrate(cfg, args):
    out = cfg.out_dir / "calibration"
    for path in _manifest_paths(cfg):
        manifest = dataio.RecordingManifest.load(path)
        imu, poses, _ = dataio.ingest(manifest)
        res = calibrate(imu, poses, baseline=cfg.calibrate.baseline, stride=cfg.calibrate.stride,
                        refine_iterations=cfg.calibrate.refine_iterations)
        _dump_json(out / f"{manifest.name}.json", res.to_dict())
        print(f"{manifest.name}: {res.n_pairs} pairs, rms {np.degrees(res.rms_angle):.4f} deg")


def cmd_derive_bias(cfg, args):
    out = cfg.out_dir / "bias"
    out.mkdir(parents=True, exist_ok=True)
    paths = _manifest_paths(cfg)
    for manifest, _, _, _, records in _map(partial(_derive_one, cfg), paths, args.jobs):
        gtbias.write_bias_jsonl(out / f"{manifest.name}.jsonl", records)
        n_ok = sum(r.valid for r in records)
        print(f"{manifest.name}: {n_ok}/{len(records)} valid segments")


def cmd_train(cfg, args):
    recs = load_recordings(cfg, args.jobs)
    train, val, _ = _partitions(cfg, recs)
    mc = cfg.model_config()
    tc = cfg.train_config()
    out = cfg.out_dir / "models"
    out.mkdir(parents=True, exist_ok=True)
    ckpt = cfg.out_dir / "checkpoints"
    ckpt.mkdir(parents=True, exist_ok=True)

    tables = pipeline.step_tables(train, mc.window_w)
    norm = dataio.NormalizationStats.fit(tables)
    _, gaps = pipeline.windows(tables, mc.history_len, pipeline.default_overlap(mc.variant), norm)
    dataio.write_gaps_jsonl(out / "gaps.jsonl", gaps)

    results = pipeline.train_models(train, val, mc, tc, checkpoint_dir=ckpt, resume=args.resume)
    for target, res in results.items():
        res.artifact.save(out / f"{target}.ikm")
        write_loss_curve(out / f"{target}_loss.csv", res.curve)
        best = res.curve[res.best_epoch] if res.best_epoch >= 0 else res.curve[-1]
        print(f"{target}: best epoch {res.best_epoch}, val loss {best['val_loss']:.6g}")


def _load_models(cfg):
    paths = [cfg.path(p) for p in cfg.eval.models] or sorted((cfg.out_dir / "models").glob("*.ikm"))
    if not paths:
        raise ConfigError("no trained models found: run `train` first or set eval.models")
    for p in paths:
        if not p.exists():
            raise ConfigError(f"model file {p} not found")
    return [ModelArtifact.load(p) for p in paths]


def cmd_eval(cfg, args):
    models = _load_models(cfg)
    recs = load_recordings(cfg, args.jobs)
    _, _, test = _partitions(cfg, recs)
    report = reduction_report(models, test, split=cfg.split, feedback=cfg.eval.feedback, gravity=_gravity(cfg))
    out = cfg.out_dir / "eval"
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    write_plot_data(out / "per_segment.csv", report)
    print(f"delta-alpha before {report.delta_alpha_before:.6g} m, after {report.delta_alpha_after:.6g} m, "
          f"reduction {report.reduction:.4f} (gt bias {report.reduction_gt:.4f}) over {report.segment_count} segments")


def _sweep_cell(cfg_dict, base_dir, recs, axis, cell):
    cfg = config_mod.from_dict(cfg_dict, base_dir)
    variant, value = cell["variant"], cell["value"]
    overrides = {"variant": variant}
    if axis == "window_w":
        overrides["window_w"] = int(value)
    elif axis == "history_L":
        overrides["history_len"] = int(value)
    mc = cfg.model_config(**overrides)
    tc = cfg.train_config()
    if axis in ("window_w", "history_L"):
        train, val, test = _partitions(cfg, recs)
    elif axis == "motion":
        code = dataio._MOTION.get(str(value))
        if code is None:
            raise ConfigError(f"unknown motion {value!r}")
        base_train, _, base_test = _partitions(cfg, recs)
        train = [r for r in base_train if r.activity == code]
        test = [r for r in base_test if r.activity != code]
        val = test
    else:
        base_train, _, base_test = _partitions(cfg, recs)
        train = [r for r in base_train if r.imu_source == value]
        test = [r for r in base_test if r.imu_source != value]
        val = test
    if not train or not test:
        raise ConfigError(f"cell {value!r}: empty train or test partition")
    results = pipeline.train_models(train, val, mc, tc)
    report = reduction_report([r.artifact for r in results.values()], test)
    best = [r.curve[r.best_epoch] for r in results.values()]
    return {
        "train_loss": float(np.mean([b["train_loss"] for b in best])),
        "val_loss": float(np.mean([b["val_loss"] for b in best])),
        "val_loss_phys": float(np.mean([b["val_loss_phys"] for b in best])),
        "reduction": report.reduction,
        "reduction_gt": report.reduction_gt,
        "segments": report.segment_count,
    }


def cmd_sweep(cfg, args):
    recs = load_recordings(cfg, args.jobs)
    sw = cfg.sweep
    cfg_dict = cfg.to_dict()
    cells = [{"variant": v, "value": x} for v in sw.variants for x in sw.values]
    rows = sweep(sw.axis, cells, partial(_sweep_cell, cfg_dict, cfg.base_dir, recs, sw.axis), jobs=args.jobs)
    out = cfg.out_dir / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(out / f"{sw.axis}.csv", rows)
    for r in rows:
        print(f"{sw.axis}={r['value']} {r['variant']}: {r['status']}"
              + (f" val_loss {r['val_loss']:.5g} reduction {r['reduction']:.4f}" if r["status"] == "ok" else f" {r.get('error')}"))


def cmd_convert(cfg, args):
    c = cfg.convert
    if not (c.imu_csv and c.pose_csv and c.participant_id):
        raise ConfigError("convert needs imu_csv, pose_csv and participant_id")
    activity = dataio._ACTIVITY_ALIASES.get(c.activity, c.activity)
    out = cfg.out_dir / "recordings" / f"{c.participant_id}_{activity}_{c.imu_source}"
    path = dataio.convert_topic_export(cfg.path(c.imu_csv), cfg.path(c.pose_csv), out, c.participant_id,
                                       c.activity, c.imu_source)
    print(f"wrote {path}")


def cmd_quickstart(cfg, args):
    for fn in (cmd_simulate, cmd_derive_bias, cmd_train, cmd_eval):
        fn(cfg, args)


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "derive-bias": cmd_derive_bias,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "convert": cmd_convert,
    "quickstart": cmd_quickstart,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration (JSON)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--preset", choices=("desk", "paper"), help="model size preset")
    common.add_argument("--resume", action="store_true", help="resume training from checkpoints")
    parser = argparse.ArgumentParser(prog="inertia-kit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("INERTIA_KIT_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = config_mod.load(args.config, seed=args.seed, preset=args.preset)
        if args.out:
            cfg.out = str(Path(args.out).resolve())
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        cfg.snapshot(cfg.out_dir / f"{args.command}.resolved.json")
        COMMANDS[args.command](cfg, args)
    except InertiaKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
