"""Layers built on the autodiff engine: linear, LSTM, layer norm, attention."""

import numpy as np

from .autodiff import Tensor, concat, stack


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name=""):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing = set(params) ^ set(state)
            raise KeyError(f"state mismatch: {sorted(missing)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def n_parameters(self):
        return int(sum(p.data.size for p in self.parameters()))


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True, zero=False):
        bound = np.sqrt(6.0 / (n_in + n_out))
        self.W = Parameter(np.zeros((n_in, n_out)) if zero else _uniform(rng, (n_in, n_out), bound))
        self.b = Parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x):
        y = x @ self.W
        return y + self.b if self.b is not None else y


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        xc = x - x.mean(axis=-1, keepdims=True)
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return xc / (var + self.eps).sqrt() * self.gamma + self.beta


class LSTMLayer(Module):
    """Single-direction LSTM layer, gate order (input, forget, cell, output)."""

    def __init__(self, n_in, hidden, rng):
        k = 1.0 / np.sqrt(hidden)
        self.hidden = hidden
        self.W = Parameter(_uniform(rng, (n_in, 4 * hidden), k))
        self.U = Parameter(_uniform(rng, (hidden, 4 * hidden), k))
        b = _uniform(rng, 4 * hidden, k)
        b[hidden:2 * hidden] += 1.0
        self.b = Parameter(b)

    def cell(self, xw_t, state):
        h, c = state
        H = self.hidden
        z = xw_t + h @ self.U
        i = z[:, :H].sigmoid()
        f = z[:, H:2 * H].sigmoid()
        g = z[:, 2 * H:3 * H].tanh()
        o = z[:, 3 * H:].sigmoid()
        c = f * c + i * g
        h = o * c.tanh()
        return h, c

    def initial_state(self, batch):
        z = Tensor(np.zeros((batch, self.hidden)))
        return z, z

    def __call__(self, x, state=None):
        """x: (B, T, n_in) -> outputs (B, T, H), final (h, c)."""
        B, T = x.shape[:2]
        state = state or self.initial_state(B)
        xw = x @ self.W + self.b
        outs = []
        for t in range(T):
            state = self.cell(xw[:, t], state)
            outs.append(state[0])
        return stack(outs, axis=1), state


def positional_encoding(length, dim):
    """Sinusoidal encoding, (length, dim)."""
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def causal_mask(t_q, t_k):
    """Additive mask letting query position i see keys 0..i."""
    return np.where(np.arange(t_k)[None, :] <= np.arange(t_q)[:, None], 0.0, -1e9)


class MultiHeadAttention(Module):
    def __init__(self, dim, heads, rng):
        if dim % heads:
            raise ValueError(f"embed dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.o = Linear(dim, dim, rng)

    def _split(self, x):
        B, T, E = x.shape
        return x.reshape(B, T, self.heads, E // self.heads).swapaxes(1, 2)

    def __call__(self, x_q, x_kv, mask=None):
        B, T, E = x_q.shape
        q, k, v = self._split(self.q(x_q)), self._split(self.k(x_kv)), self._split(self.v(x_kv))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(E // self.heads))
        if mask is not None:
            scores = scores + mask
        attn = scores.softmax(axis=-1)
        out = (attn @ v).swapaxes(1, 2).reshape(B, T, E)
        return self.o(out)


class FeedForward(Module):
    def __init__(self, dim, hidden, rng):
        self.l1 = Linear(dim, hidden, rng)
        self.l2 = Linear(hidden, dim, rng)

    def __call__(self, x):
        return self.l2(self.l1(x).relu())


class EncoderLayer(Module):
    """Pre-norm self-attention block."""

    def __init__(self, dim, heads, ffn, rng):
        self.n1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.n2 = LayerNorm(dim)
        self.ff = FeedForward(dim, ffn, rng)

    def __call__(self, x, mask):
        h = self.n1(x)
        x = x + self.attn(h, h, mask)
        return x + self.ff(self.n2(x))


class DecoderLayer(Module):
    """Pre-norm self-attention, cross-attention to the encoder, feed-forward."""

    def __init__(self, dim, heads, ffn, rng):
        self.n1 = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.n2 = LayerNorm(dim)
        self.cross = MultiHeadAttention(dim, heads, rng)
        self.n3 = LayerNorm(dim)
        self.ff = FeedForward(dim, ffn, rng)

    def __call__(self, y, memory, self_mask, cross_mask):
        h = self.n1(y)
        y = y + self.self_attn(h, h, self_mask)
        y = y + self.cross(self.n2(y), memory, cross_mask)
        return y + self.ff(self.n3(y))


__all__ = [
    "Parameter", "Module", "Linear", "LayerNorm", "LSTMLayer", "MultiHeadAttention",
    "FeedForward", "EncoderLayer", "DecoderLayer", "positional_encoding", "causal_mask", "concat",
]
