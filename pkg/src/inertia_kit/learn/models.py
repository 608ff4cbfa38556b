"""Bias predictors: a stacked LSTM and an encoder-decoder transformer.

Both map a sequence of per-step inputs to per-step bias predictions. A step's
input is its flattened pooled IMU window (w × 6, normalized) together with
the normalized previous-step bias for the target channels. Predictions are in
normalized bias units; the head sees the sequence output and the previous
bias, and with ``residual`` the previous bias is added back, so a fresh model
with a zero head predicts "no change".
"""

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ConfigError
from .autodiff import Tensor, concat
from .nn import DecoderLayer, EncoderLayer, LayerNorm, Linear, LSTMLayer, Module, causal_mask, positional_encoding

TARGET_CHANNELS = {"accel_bias": slice(0, 3), "gyro_bias": slice(3, 6), "joint": slice(0, 6)}
VARIANTS = ("recurrent", "attention")


@dataclass
class ModelConfig:
    variant: str = "recurrent"
    layers: int = 2
    hidden_dim: int = 32
    heads: int = 4
    embed_dim: int = 64
    history_len: int = 32
    window_w: int = 10
    target: str = "accel_bias"
    ffn_dim: int = 0
    residual: bool = True
    zero_head: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.target not in TARGET_CHANNELS:
            raise ConfigError(f"target must be one of {tuple(TARGET_CHANNELS)}")
        for k in ("layers", "hidden_dim", "heads", "embed_dim", "history_len", "window_w"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1")
        if self.variant == "attention" and self.embed_dim % self.heads:
            raise ConfigError("embed_dim must be divisible by heads")

    @property
    def channels(self):
        return TARGET_CHANNELS[self.target]

    @property
    def out_dim(self):
        c = self.channels
        return c.stop - c.start

    @property
    def in_dim(self):
        return 6 * self.window_w + self.out_dim

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def preset(cls, variant, scale="desk", **overrides):
        table = {
            ("recurrent", "desk"): dict(layers=2, hidden_dim=32, history_len=32),
            ("recurrent", "paper"): dict(layers=2, hidden_dim=256, history_len=32),
            ("attention", "desk"): dict(layers=2, heads=4, embed_dim=64, ffn_dim=128, history_len=32),
            ("attention", "paper"): dict(layers=2, heads=8, embed_dim=512, ffn_dim=2048, history_len=100),
        }
        try:
            base = table[(variant, scale)]
        except KeyError:
            raise ConfigError(f"no preset for {variant!r}/{scale!r}") from None
        return cls(variant=variant, **{"window_w": 10, **base, **overrides})


class RecurrentBiasModel(Module):
    def __init__(self, cfg: ModelConfig):
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        dims = [cfg.in_dim] + [cfg.hidden_dim] * cfg.layers
        self.lstm = [LSTMLayer(dims[i], dims[i + 1], rng) for i in range(cfg.layers)]
        self.head = Linear(cfg.hidden_dim + cfg.out_dim, cfg.out_dim, rng, zero=cfg.zero_head)

    def initial_state(self, batch):
        return [layer.initial_state(batch) for layer in self.lstm]

    def __call__(self, x, prev, state=None):
        """x: (B, T, 6w), prev: (B, T, d) -> (pred (B, T, d), state)."""
        x, prev = _as(x), _as(prev)
        state = state or self.initial_state(x.shape[0])
        h = concat([x, prev], axis=-1)
        new_state = []
        for layer, s in zip(self.lstm, state):
            h, s = layer(h, s)
            new_state.append(s)
        out = self.head(concat([h, prev], axis=-1))
        return (prev + out if self.cfg.residual else out), new_state


class AttentionBiasModel(Module):
    """Encoder over per-step IMU tokens, decoder over previous-bias tokens.

    Both stacks are causally masked, so the output at step t depends only on
    steps ≤ t and the last position is a prediction from the full window.
    """

    def __init__(self, cfg: ModelConfig):
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        E = cfg.embed_dim
        ffn = cfg.ffn_dim or 2 * E
        self.enc_in = Linear(cfg.in_dim, E, rng)
        self.dec_in = Linear(cfg.out_dim, E, rng)
        self.encoder = [EncoderLayer(E, cfg.heads, ffn, rng) for _ in range(cfg.layers)]
        self.decoder = [DecoderLayer(E, cfg.heads, ffn, rng) for _ in range(cfg.layers)]
        self.enc_norm = LayerNorm(E)
        self.dec_norm = LayerNorm(E)
        self.head = Linear(E + cfg.out_dim, cfg.out_dim, rng, zero=cfg.zero_head)

    def __call__(self, x, prev, state=None):
        x, prev = _as(x), _as(prev)
        T = x.shape[1]
        pe = positional_encoding(T, self.cfg.embed_dim)
        mask = causal_mask(T, T)
        m = self.enc_in(concat([x, prev], axis=-1)) + pe
        for layer in self.encoder:
            m = layer(m, mask)
        m = self.enc_norm(m)
        y = self.dec_in(prev) + pe
        for layer in self.decoder:
            y = layer(y, m, mask, mask)
        y = self.dec_norm(y)
        out = self.head(concat([y, prev], axis=-1))
        return (prev + out if self.cfg.residual else out), None


def _as(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def build_model(cfg: ModelConfig):
    return RecurrentBiasModel(cfg) if cfg.variant == "recurrent" else AttentionBiasModel(cfg)
