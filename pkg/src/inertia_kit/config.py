"""Run configuration: a JSON document validated into nested dataclasses.

Unknown keys anywhere are rejected. The resolved configuration (defaults
filled in, command-line overrides applied) is what every command snapshots.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .learn import ModelConfig, TrainConfig


@dataclass
class SimConfig:
    participants: list = field(default_factory=lambda: list("ABCDEFGH"))
    kinds: list = field(default_factory=lambda: ["walk", "run"])
    noise: list = field(default_factory=lambda: ["livox"])
    duration: float = 60.0
    bias_mode: str = "sinusoid"
    accel_bias_scale: float = 0.1
    gyro_bias_scale: float = 0.01
    drift_amp_a: float = 0.03
    drift_amp_w: float = 0.005
    drift_sigma_a: float = 0.0
    drift_sigma_w: float = 0.0
    drift_period: float = 30.0
    mount_angle: float = 0.0

    def validate(self):
        if self.duration <= 0:
            raise ConfigError(f"simulate.duration must be > 0, got {self.duration}")
        if not self.participants or not self.kinds or not self.noise:
            raise ConfigError("simulate.participants, kinds and noise must be non-empty")


@dataclass
class DataConfig:
    manifests: list = field(default_factory=list)
    calibration: object = "identity"
    gravity: list = field(default_factory=lambda: [0.0, 0.0, 9.81])
    gravity_enabled: bool = True
    segment_length: float = 0.5
    chaining: bool = True
    iterations: int = 1

    def validate(self):
        if not 0 < self.segment_length <= 5:
            raise ConfigError("data.segment_length must be in (0, 5] seconds")


@dataclass
class CalibConfig:
    baseline: float = 0.25
    stride: float = None
    refine_iterations: int = 3

    def validate(self):
        if self.baseline <= 0:
            raise ConfigError("calibrate.baseline must be > 0")


@dataclass
class EvalConfig:
    feedback: str = "teacher"
    models: list = field(default_factory=list)

    def validate(self):
        if self.feedback not in ("teacher", "predicted"):
            raise ConfigError("eval.feedback must be 'teacher' or 'predicted'")


@dataclass
class SweepConfig:
    axis: str = "window_w"
    values: list = field(default_factory=lambda: [6, 10, 20, 32])
    variants: list = field(default_factory=lambda: ["recurrent", "attention"])

    def validate(self):
        from .evaluate import SWEEP_AXES

        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}")
        if not self.values:
            raise ConfigError("sweep.values must be non-empty")


@dataclass
class ConvertConfig:
    imu_csv: str = ""
    pose_csv: str = ""
    participant_id: str = ""
    activity: str = "w"
    imu_source: str = "livox"

    def validate(self):
        pass


_SECTIONS = {
    "simulate": SimConfig,
    "data": DataConfig,
    "calibrate": CalibConfig,
    "eval": EvalConfig,
    "sweep": SweepConfig,
    "convert": ConvertConfig,
}


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "out"
    preset: str = "desk"
    split: str = "holdout:H"
    validation: str = None
    simulate: SimConfig = field(default_factory=SimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    calibrate: CalibConfig = field(default_factory=CalibConfig)
    model: dict = field(default_factory=lambda: {"variant": "recurrent"})
    train: dict = field(default_factory=dict)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    convert: ConvertConfig = field(default_factory=ConvertConfig)
    base_dir: str = field(default=".", repr=False)

    def model_config(self, **overrides):
        d = {**self.model, **overrides}
        variant = d.pop("variant", "recurrent")
        d.setdefault("seed", self.seed)
        return ModelConfig.preset(variant, self.preset, **d)

    def train_config(self, **overrides):
        return TrainConfig.from_dict({"seed": self.seed, **self.train, **overrides})

    def path(self, p):
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def out_dir(self):
        return self.path(self.out)

    def validate(self):
        if self.preset not in ("desk", "paper"):
            raise ConfigError("preset must be 'desk' or 'paper'")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        for name in _SECTIONS:
            getattr(self, name).validate()
        self.model_config()
        self.train_config()

    def to_dict(self):
        d = asdict(self)
        d.pop("base_dir")
        d["model_resolved"] = self.model_config().to_dict()
        d["train_resolved"] = self.train_config().to_dict()
        return d

    def snapshot(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _strict(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {unknown}")
    return cls(**d)


def from_dict(d, base_dir=".") -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    d = dict(d)
    for key in ("model_resolved", "train_resolved"):
        d.pop(key, None)
    known = {f.name for f in fields(RunConfig)} - {"base_dir"}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {unknown}")
    for name, cls in _SECTIONS.items():
        if name in d:
            d[name] = _strict(cls, d[name], name)
    for name in ("model", "train"):
        if name in d and not isinstance(d[name], dict):
            raise ConfigError(f"{name} must be an object")
    cfg = RunConfig(**d, base_dir=str(base_dir))
    try:
        cfg.validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load(path, **overrides) -> RunConfig:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    d.update({k: v for k, v in overrides.items() if v is not None})
    return from_dict(d, base_dir=path.parent)

