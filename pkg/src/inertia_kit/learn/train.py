"""Training loop, checkpointing and inference for the bias predictors."""

import csv
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..dataio import NormalizationStats
from ..errors import ConfigError, DivergenceError, FormatError, ShapeError
from .artifact import ModelArtifact, data_fingerprint, pack, unpack, write_atomic
from .autodiff import mse, no_grad
from .models import ModelConfig, build_model
from .optim import Adam, clip_grad_norm

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    patience: int = 0
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    restore_best: bool = True

    def __post_init__(self):
        if self.epochs <= 0:
            raise ConfigError("epochs must be > 0")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be > 0")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class SequenceArrays:
    """Model-ready arrays: inputs X (N, L, 6w), previous bias P and target Y
    (N, L, d), both in normalized units for the model's target channels."""

    X: np.ndarray
    P: np.ndarray
    Y: np.ndarray

    def __len__(self):
        return len(self.X)

    def take(self, idx):
        return SequenceArrays(self.X[idx], self.P[idx], self.Y[idx])


def sequence_arrays(seqs, norm: NormalizationStats, cfg: ModelConfig) -> SequenceArrays:
    ch = cfg.channels
    L, w = cfg.history_len, cfg.window_w
    d = cfg.out_dim
    if not seqs:
        return SequenceArrays(np.zeros((0, L, 6 * w)), np.zeros((0, L, d)), np.zeros((0, L, d)))
    for s in seqs:
        if s.features.shape[:2] != (L, w):
            raise ShapeError(f"sequence shape {s.features.shape[:2]} != (L={L}, w={w})")
    X = np.stack([s.features.reshape(L, 6 * w) for s in seqs])
    P = np.stack([norm.normalize_bias(s.prev_bias)[:, ch] for s in seqs])
    Y = np.stack([norm.normalize_bias(s.target_bias)[:, ch] for s in seqs])
    return SequenceArrays(X, P, Y)


def _physical_mse(pred, target, norm, ch):
    scale = norm.bias_std[ch]
    d = (pred - target) * scale
    return float(np.mean(np.sum(d * d, axis=-1)))


def _eval_loss(model, data: SequenceArrays, norm, ch, batch=256):
    if len(data) == 0:
        return float("nan"), float("nan")
    tot = tot_p = 0.0
    with no_grad():
        for i in range(0, len(data), batch):
            part = data.take(slice(i, i + batch))
            pred, _ = model(part.X, part.P)
            tot += float(mse(pred, part.Y).data) * len(part)
            tot_p += _physical_mse(pred.data, part.Y, norm, ch) * len(part)
    return tot / len(data), tot_p / len(data)


@dataclass
class TrainResult:
    artifact: ModelArtifact
    curve: list
    best_epoch: int


CURVE_FIELDS = ["epoch", "train_loss", "val_loss", "train_loss_phys", "val_loss_phys", "grad_norm"]


def write_loss_curve(path, curve):
    with open(path, "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=CURVE_FIELDS, lineterminator="\n")
        wr.writeheader()
        for row in curve:
            wr.writerow({k: (repr(float(row[k])) if k != "epoch" else row[k]) for k in CURVE_FIELDS})


def _save_checkpoint(path, epoch, model, opt, best_state, best, curve, meta):
    arrays = {f"w/{k}": v for k, v in model.state_dict().items()}
    arrays.update(opt.state_arrays())
    arrays.update({f"best/{k}": v for k, v in best_state.items()})
    header = {"kind": "checkpoint", "epoch": epoch, "adam_t": opt.t, "best": best, "curve": curve, **meta}
    write_atomic(path, pack(header, arrays))


def _load_checkpoint(path):
    header, arrays = unpack(Path(path).read_bytes())
    if header.get("kind") != "checkpoint":
        raise FormatError(f"{path} is not a training checkpoint")
    return header, arrays


def _resume_key(fp):
    """Fingerprint fields a checkpoint must share with the run resuming it;
    the epoch budget and early-stop patience may change."""
    tc = {k: v for k, v in fp.get("train_config", {}).items() if k not in ("epochs", "patience")}
    return {**{k: v for k, v in fp.items() if k != "train_config"}, "train_config": tc}


def train(train_seqs, val_seqs, mc: ModelConfig, tc: TrainConfig, norm: NormalizationStats, *,
          checkpoint_path=None, resume=False) -> TrainResult:
    """Fit one bias predictor with the mean squared error loss.

    Shuffling uses ``default_rng([seed, epoch])`` so a run resumed from a
    checkpoint replays the same batches as an uninterrupted one.
    """
    data = sequence_arrays(train_seqs, norm, mc)
    val = sequence_arrays(val_seqs, norm, mc)
    if len(data) == 0:
        raise ConfigError("empty training set: no windows of the requested length")
    ch = mc.channels
    model = build_model(mc)
    opt = Adam(model.named_parameters(), lr=tc.lr, betas=(tc.beta1, tc.beta2), weight_decay=tc.weight_decay)
    fingerprint = {
        "train_data_sha256": data_fingerprint(data.X, data.P, data.Y),
        "val_data_sha256": data_fingerprint(val.X, val.P, val.Y),
        "train_sequences": len(data),
        "val_sequences": len(val),
        "seed": tc.seed,
        "train_config": tc.to_dict(),
    }

    curve, start = [], 0
    best, best_epoch, best_state, stale = np.inf, -1, model.state_dict(), 0
    if resume and checkpoint_path and Path(checkpoint_path).exists():
        header, arrays = _load_checkpoint(checkpoint_path)
        if _resume_key(header.get("fingerprint", {})) != _resume_key(fingerprint) \
                or header.get("model_config") != mc.to_dict():
            raise ConfigError("checkpoint does not match this data/configuration")
        model.load_state_dict({k[2:]: v for k, v in arrays.items() if k.startswith("w/")})
        opt.load_state_arrays(arrays, header["adam_t"])
        best_state = {k[5:]: v for k, v in arrays.items() if k.startswith("best/")}
        best, best_epoch = header["best"]["loss"], header["best"]["epoch"]
        best = np.inf if best is None else best
        stale = header["best"]["stale"]
        curve = header["curve"]
        start = header["epoch"] + 1
        log.info("resumed from %s at epoch %d", checkpoint_path, start)

    def snapshot(state, ep):
        return ModelArtifact(mc, norm, state, dict(fingerprint, epochs_trained=ep + 1))

    n = len(data)
    for epoch in range(start, tc.epochs):
        rng = np.random.default_rng([tc.seed, epoch])
        perm = rng.permutation(n)
        tot = tot_p = gmax = 0.0
        for i in range(0, n, tc.batch_size):
            batch = data.take(perm[i:i + tc.batch_size])
            model.zero_grad()
            pred, _ = model(batch.X, batch.P)
            loss = mse(pred, batch.Y)
            lv = float(loss.data)
            if not np.isfinite(lv):
                raise DivergenceError(f"non-finite loss at epoch {epoch}",
                                      checkpoint=snapshot(best_state, max(best_epoch, 0)), epoch=epoch)
            loss.backward()
            gmax = max(gmax, clip_grad_norm(model.parameters(), tc.clip_norm))
            opt.step()
            tot += lv * len(batch)
            tot_p += _physical_mse(pred.data, batch.Y, norm, ch) * len(batch)
        if not all(np.all(np.isfinite(p.data)) for p in model.parameters()):
            raise DivergenceError(f"non-finite weights after epoch {epoch}",
                                  checkpoint=snapshot(best_state, max(best_epoch, 0)), epoch=epoch)
        vl, vl_p = _eval_loss(model, val, norm, ch)
        curve.append({"epoch": epoch, "train_loss": tot / n, "val_loss": vl,
                      "train_loss_phys": tot_p / n, "val_loss_phys": vl_p, "grad_norm": gmax})
        score = vl if np.isfinite(vl) else tot / n
        if score < best:
            best, best_epoch, best_state, stale = score, epoch, model.state_dict(), 0
        else:
            stale += 1
        if checkpoint_path:
            _save_checkpoint(checkpoint_path, epoch, model, opt, best_state,
                             {"loss": float(best), "epoch": best_epoch, "stale": stale}, curve,
                             {"fingerprint": fingerprint, "model_config": mc.to_dict()})
        if tc.patience and stale >= tc.patience:
            log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
            break

    last = curve[-1]["epoch"] if curve else start - 1
    final = best_state if tc.restore_best else model.state_dict()
    return TrainResult(snapshot(final, last), curve, best_epoch)


def predict(model, history, norm: NormalizationStats = None):
    """Bias prediction (physical units, target channels) for the last step of
    each history. ``model`` is a ModelArtifact or a (module, norm) source.

    ``history`` is one WindowSequence or a list; returns (d,) or (N, d).
    """
    if isinstance(model, ModelArtifact):
        norm, net = model.norm, model.build()
    else:
        net = model
    cfg = net.cfg
    single = not isinstance(history, (list, tuple))
    seqs = [history] if single else list(history)
    for s in seqs:
        if len(s) != cfg.history_len:
            raise ShapeError(f"history length {len(s)} != L={cfg.history_len}")
    arr = sequence_arrays(seqs, norm, cfg)
    with no_grad():
        pred, _ = net(arr.X, arr.P)
    out = norm.denormalize_bias(pred.data[:, -1], cfg.channels)
    return out[0] if single else out


class InferenceSession:
    """Step-by-step inference that owns recurrent state.

    Recurrent models carry (h, c) between calls; attention models keep a
    rolling buffer of the last L steps and predict from it.
    """

    def __init__(self, artifact: ModelArtifact):
        self.artifact = artifact
        self.net = artifact.build()
        self.norm = artifact.norm
        self.cfg = artifact.config
        self.reset()

    def reset(self):
        self.state = None
        self._x, self._p = [], []

    def step(self, features, prev_bias):
        """features: (w, 6) normalized pooled window; prev_bias: raw 6-vector.
        Returns the predicted bias for the target channels."""
        cfg = self.cfg
        x = np.asarray(features, dtype=float).reshape(1, 1, 6 * cfg.window_w)
        p = self.norm.normalize_bias(np.asarray(prev_bias, dtype=float))[cfg.channels].reshape(1, 1, -1)
        with no_grad():
            if cfg.variant == "recurrent":
                pred, self.state = self.net(x, p, self.state)
            else:
                self._x.append(x)
                self._p.append(p)
                self._x, self._p = self._x[-cfg.history_len:], self._p[-cfg.history_len:]
                pred, _ = self.net(np.concatenate(self._x, axis=1), np.concatenate(self._p, axis=1))
        return self.norm.denormalize_bias(pred.data[0, -1], cfg.channels)
