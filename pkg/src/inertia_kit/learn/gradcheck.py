"""Finite-difference verification of the reverse-mode gradients."""

import numpy as np

from ..errors import GradientCheckError
from .autodiff import mse
from .models import ModelConfig, build_model


def tiny_config(variant, seed=0, **overrides):
    """Smallest useful model for gradient checking (random, non-zero head)."""
    base = dict(variant=variant, layers=1, hidden_dim=6, heads=2, embed_dim=8, ffn_dim=12,
                history_len=3, window_w=2, zero_head=False, seed=seed)
    base.update(overrides)
    return ModelConfig(**base)


def model_loss_fn(model, batch=2, seed=0):
    """Loss closure on random inputs sized for ``model.cfg``."""
    cfg = model.cfg
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((batch, cfg.history_len, cfg.in_dim - cfg.out_dim))
    P = rng.standard_normal((batch, cfg.history_len, cfg.out_dim))
    Y = rng.standard_normal((batch, cfg.history_len, cfg.out_dim))
    return lambda: mse(model(X, P)[0], Y)


def gradient_engine_check(model, loss_fn=None, *, eps=1e-5, tol=1e-4, floor=1e-5, raise_on_failure=True):
    """Compare every parameter gradient with central differences.

    Returns ``{parameter name: relative error}`` where the error of a block is
    ``‖g - g_fd‖ / max(‖g‖, ‖g_fd‖, floor)``. The floor sits above the
    finite-difference noise so blocks whose true gradient is zero (the key
    bias of softmax attention, for one) compare as absolute errors.
    """
    loss_fn = loss_fn or model_loss_fn(model)
    model.zero_grad()
    loss_fn().backward()
    report = {}
    for name, p in model.named_parameters():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * eps)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
        report[name] = float(np.linalg.norm(analytic - numeric) / scale)
    failures = {k: v for k, v in report.items() if not v < tol}
    if failures and raise_on_failure:
        raise GradientCheckError(f"gradient mismatch in {sorted(failures)}", failures)
    return report


def check_variant(variant, seed=0, **overrides):
    return gradient_engine_check(build_model(tiny_config(variant, seed, **overrides)))
