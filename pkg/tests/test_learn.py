import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from inertia_kit import dataio, pipeline
from inertia_kit.errors import ConfigError, DivergenceError, FormatError, GradientCheckError, ShapeError
from inertia_kit.learn import (InferenceSession, ModelArtifact, ModelConfig, Tensor, TrainConfig, build_model,
                               check_variant, gradient_engine_check, predict, tiny_config, train)
from inertia_kit.learn.autodiff import concat, mse, stack
from inertia_kit.learn.nn import LSTMLayer, Linear, Module, MultiHeadAttention, causal_mask
from inertia_kit.learn.optim import Adam, clip_grad_norm


def fd_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        o = x[i]
        x[i] = o + eps
        up = f()
        x[i] = o - eps
        dn = f()
        x[i] = o
        g[i] = (up - dn) / (2 * eps)
    return g


OPS = {
    "add_broadcast": lambda a, b: (a + b[0]).sum(),
    "mul": lambda a, b: (a * b).sum(),
    "div": lambda a, b: (a / (b * b + 1.0)).sum(),
    "matmul": lambda a, b: (a @ b.swapaxes(0, 1)).tanh().sum(),
    "exp_log": lambda a, b: ((a * a + 1.0).log() + (b * 0.1).exp()).sum(),
    "sqrt_pow": lambda a, b: ((a * a + 1.0).sqrt() + b ** 3).sum(),
    "sigmoid_relu": lambda a, b: (a.sigmoid() * b.relu()).sum(),
    "softmax": lambda a, b: (a.softmax(axis=-1) * b).sum(),
    "mean_reshape": lambda a, b: (a.reshape(4, 3).mean(axis=0) * b.reshape(12)[:3]).sum(),
    "index_concat_stack": lambda a, b: (concat([a[:, :2], b], axis=1) * 2.0).sum() + stack([a, b]).mean(),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name, rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    OPS[name](ta, tb).backward()
    fa = fd_grad(lambda: float(OPS[name](Tensor(a), Tensor(b)).data), a)
    fb = fd_grad(lambda: float(OPS[name](Tensor(a), Tensor(b)).data), b)
    assert np.allclose(ta.grad, fa, atol=1e-7) and np.allclose(tb.grad, fb, atol=1e-7)


def test_single_linear_layer_closed_form(rng):
    lin = Linear(5, 3, rng)
    x = rng.normal(size=(7, 5))
    y = rng.normal(size=(7, 3))
    lin.zero_grad()
    mse(lin(Tensor(x)), y).backward()
    r = x @ lin.W.data + lin.b.data - y
    # loss = mean over rows of |r|², so dL/dW = 2 xᵀ r / n
    assert np.allclose(lin.W.grad, 2 * x.T @ r / 7, atol=1e-13)
    assert np.allclose(lin.b.grad, 2 * r.sum(axis=0) / 7, atol=1e-13)
    assert max(gradient_engine_check(lin, lambda: mse(lin(Tensor(x)), y)).values()) < 1e-6


class _Cell(Module):
    def __init__(self, rng):
        self.lstm = LSTMLayer(3, 4, rng)

    def __call__(self, x):
        return self.lstm(x, self.lstm.initial_state(x.shape[0]))[0]


class _Attn(Module):
    def __init__(self, rng):
        self.attn = MultiHeadAttention(4, 1, rng)

    def __call__(self, x):
        return self.attn(x, x, causal_mask(x.shape[1], x.shape[1]))


def test_recurrent_cell_three_steps(rng):
    cell = _Cell(rng)
    x, y = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 4))
    report = gradient_engine_check(cell, lambda: mse(cell(Tensor(x)), y))
    assert max(report.values()) < 1e-4


def test_one_head_attention_block(rng):
    blk = _Attn(rng)
    x, y = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4))
    report = gradient_engine_check(blk, lambda: mse(blk(Tensor(x)), y))
    assert max(report.values()) < 1e-4


@pytest.mark.parametrize("variant", ["recurrent", "attention"])
def test_full_model_gradient_check(variant):
    report = check_variant(variant)
    assert len(report) == len(list(build_model(tiny_config(variant)).named_parameters()))
    assert max(report.values()) < 1e-4


def test_gradient_check_reports_failures(rng):
    lin = Linear(3, 2, rng)
    x = rng.normal(size=(4, 3))

    def wrong():  # gradient cut by going through numpy
        return mse(Tensor(lin(Tensor(x)).data) + lin.b * 0.0, np.zeros((4, 2)))

    with pytest.raises(GradientCheckError) as exc:
        gradient_engine_check(lin, wrong)
    assert "W" in str(exc.value)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.integers(-4000, 4000).map(lambda i: i / 4)),
       arrays(np.float64, (3, 4), elements=st.integers(-4000, 4000).map(lambda i: i / 4)))
def test_loss_nonnegative_zero_iff_equal(p, t):
    v = float(mse(Tensor(p), t).data)
    assert v >= 0
    assert (v == 0) == bool(np.array_equal(p, t))


def test_zero_input_zero_output():
    for variant in ("recurrent", "attention"):
        m = build_model(ModelConfig.preset(variant, history_len=4, window_w=2))
        pred, _ = m(np.zeros((1, 4, 12)), np.zeros((1, 4, 3)))
        assert np.array_equal(pred.data, np.zeros((1, 4, 3)))


def test_recurrent_is_stateful(rng):
    cfg = tiny_config("recurrent", history_len=5, window_w=2)
    m = build_model(cfg)
    x, p = rng.normal(size=(1, 6, 12)), rng.normal(size=(1, 6, 3))
    full, _ = m(x, p)
    shifted, _ = m(x[:, 1:], p[:, 1:])
    assert not np.allclose(full.data[0, -1], shifted.data[0, -1])
    # carrying state across calls equals one pass over the whole sequence
    a, s = m(x[:, :3], p[:, :3])
    b, _ = m(x[:, 3:], p[:, 3:], s)
    assert np.allclose(np.concatenate([a.data, b.data], axis=1), full.data, atol=1e-12)


def test_attention_sees_window_order(rng):
    m = build_model(tiny_config("attention", history_len=5, window_w=2))
    x, p = rng.normal(size=(1, 5, 12)), rng.normal(size=(1, 5, 3))
    perm = np.array([1, 0, 3, 2, 4])
    a, _ = m(x, p)
    b, _ = m(x[:, perm], p[:, perm])
    assert not np.allclose(a.data[0, -1], b.data[0, -1])


@pytest.mark.parametrize("variant", ["recurrent", "attention"])
def test_batch_composition_invariance(variant, rng):
    m = build_model(tiny_config(variant, history_len=4, window_w=2))
    x, p = rng.normal(size=(5, 4, 12)), rng.normal(size=(5, 4, 3))
    batch, _ = m(x, p)
    for i in range(5):
        alone, _ = m(x[i:i + 1], p[i:i + 1])
        assert np.abs(alone.data[0] - batch.data[i]).max() < 1e-9


def test_adam_and_clipping(rng):
    lin = Linear(2, 1, rng)
    for p in lin.parameters():
        p.grad = np.full_like(p.data, 10.0)
    norm = clip_grad_norm(lin.parameters(), 1.0)
    assert norm == pytest.approx(10 * np.sqrt(3))
    assert np.sqrt(sum(np.sum(p.grad ** 2) for p in lin.parameters())) == pytest.approx(1.0)
    before = lin.W.data.copy()
    Adam(lin.named_parameters(), lr=0.1).step()
    # the first Adam step moves every coordinate by lr against the gradient sign
    assert np.allclose(lin.W.data - before, -0.1, atol=1e-6)


def synthetic_sequences(n, cfg, rng, target_fn):
    seqs = []
    for i in range(n):
        L, w = cfg.history_len, cfg.window_w
        feats = rng.normal(size=(L, w, 6))
        tgt = np.array([target_fn(i, k) for k in range(L + 1)])
        seqs.append(dataio.WindowSequence(feats, tgt[:-1], tgt[1:], np.arange(L)))
    return seqs


def identity_norm():
    return dataio.NormalizationStats(np.zeros(6), np.ones(6), np.zeros(6), np.ones(6))


def test_constant_target_regression(rng):
    c = np.array([0.3, -0.2, 0.1, 0.0, 0.0, 0.0])
    for overrides in ({}, {"residual": False, "zero_head": False}):
        cfg = ModelConfig.preset("recurrent", history_len=4, window_w=2, **overrides)
        seqs = synthetic_sequences(32, cfg, rng, lambda i, k: c)
        res = train(seqs, seqs[:8], cfg, TrainConfig(epochs=20, lr=0.01, batch_size=4), identity_norm())
        first, last = res.curve[0]["val_loss"], res.curve[-1]["val_loss"]
        assert last < 1e-4 and last <= first
        assert np.abs(predict(res.artifact, seqs[:8]) - c[:3]).max() < 1e-2
        if not overrides:
            # the persistence path reproduces a constant exactly
            assert last == 0.0 and np.abs(predict(res.artifact, seqs[:8]) - c[:3]).max() < 1e-12


def test_learns_sinusoidal_drift(walk_recordings):
    mc = ModelConfig.preset("recurrent", target="accel_bias")
    res = pipeline.train_models(walk_recordings[:3], walk_recordings[3:], mc, TrainConfig(epochs=15, batch_size=8),
                                targets=("accel_bias",))["accel_bias"]
    val = walk_recordings[3].gt_bias[:, :3]
    variance = np.nansum(np.nanvar(val, axis=0))
    assert res.curve[-1]["val_loss_phys"] < 0.1 * variance


@pytest.fixture(scope="module")
def small_data():
    rng = np.random.default_rng(7)
    cfg = ModelConfig.preset("attention", history_len=4, window_w=2, embed_dim=16, heads=2, ffn_dim=16)
    seqs = synthetic_sequences(24, cfg, rng, lambda i, k: np.r_[np.sin(0.3 * (i + k)) * np.array([1, 2, 3]), 0, 0, 0])
    return cfg, seqs


@pytest.mark.parametrize("variant", ["recurrent", "attention"])
def test_training_is_deterministic(variant, small_data):
    cfg, seqs = small_data
    cfg = ModelConfig.from_dict({**cfg.to_dict(), "variant": variant})
    tc = TrainConfig(epochs=3, batch_size=5)
    a = train(seqs[:16], seqs[16:], cfg, tc, identity_norm())
    b = train(seqs[:16], seqs[16:], cfg, tc, identity_norm())
    assert a.artifact.to_bytes() == b.artifact.to_bytes() and a.curve == b.curve


def test_resume_reproduces_uninterrupted_run(small_data, tmp_path):
    cfg, seqs = small_data
    tc = TrainConfig(epochs=6, batch_size=5, restore_best=False)
    full = train(seqs[:16], seqs[16:], cfg, tc, identity_norm())
    ck = tmp_path / "m.ckpt"
    train(seqs[:16], seqs[16:], cfg, TrainConfig(epochs=3, batch_size=5, restore_best=False), identity_norm(),
          checkpoint_path=ck)
    resumed = train(seqs[:16], seqs[16:], cfg, tc, identity_norm(), checkpoint_path=ck, resume=True)
    assert resumed.artifact.to_bytes() == full.artifact.to_bytes()
    assert resumed.curve == full.curve
    with pytest.raises(ConfigError):
        train(seqs[:12], seqs[16:], cfg, tc, identity_norm(), checkpoint_path=ck, resume=True)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_carries_last_good_checkpoint(small_data):
    cfg, seqs = small_data
    bad = [dataio.WindowSequence(s.features.copy(), s.prev_bias, s.target_bias, s.step_index) for s in seqs[:16]]
    bad[-1].features[0, 0, 0] = np.inf
    with pytest.raises(DivergenceError) as exc:
        train(bad, [], cfg, TrainConfig(epochs=3, batch_size=16), identity_norm())
    assert isinstance(exc.value.checkpoint, ModelArtifact)


def test_empty_training_set(small_data):
    cfg, _ = small_data
    with pytest.raises(ConfigError):
        train([], [], cfg, TrainConfig(epochs=1), identity_norm())
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)


def test_artifact_round_trip(small_data, tmp_path):
    cfg, seqs = small_data
    art = train(seqs[:8], [], cfg, TrainConfig(epochs=1), identity_norm()).artifact
    art.save(tmp_path / "m.ikm")
    raw = (tmp_path / "m.ikm").read_bytes()
    assert raw[:8] == b"IKMODEL\0"
    back = ModelArtifact.load(tmp_path / "m.ikm")
    assert back.to_bytes() == raw
    assert np.array_equal(predict(back, seqs[:4]), predict(art, seqs[:4]))
    (tmp_path / "bad.ikm").write_bytes(b"NOTMODEL" + raw[8:])
    with pytest.raises(FormatError):
        ModelArtifact.load(tmp_path / "bad.ikm")


def test_predict_shape_checks(small_data):
    cfg, seqs = small_data
    art = train(seqs[:8], [], cfg, TrainConfig(epochs=1), identity_norm()).artifact
    short = dataio.WindowSequence(seqs[0].features[:3], seqs[0].prev_bias[:3], seqs[0].target_bias[:3], np.arange(3))
    with pytest.raises(ShapeError):
        predict(art, short)
    assert predict(art, seqs[0]).shape == (3,)


@pytest.mark.parametrize("variant", ["recurrent", "attention"])
def test_inference_session_matches_batch_forward(variant, small_data):
    cfg, seqs = small_data
    cfg = ModelConfig.from_dict({**cfg.to_dict(), "variant": variant, "zero_head": False})
    art = ModelArtifact(cfg, identity_norm(), build_model(cfg).state_dict())
    s = seqs[0]
    sess = InferenceSession(art)
    steps = [sess.step(s.features[k], s.prev_bias[k]) for k in range(len(s))]
    assert np.allclose(steps[-1], predict(art, s), atol=1e-12)


def test_model_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(variant="gru")
    with pytest.raises(ConfigError):
        ModelConfig(variant="attention", embed_dim=10, heads=4)
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"variant": "recurrent", "dropout": 0.1})
    p = ModelConfig.preset("attention", "paper")
    assert (p.heads, p.embed_dim, p.layers, p.history_len) == (8, 512, 2, 100)
    assert ModelConfig.preset("recurrent", "paper").hidden_dim == 256
