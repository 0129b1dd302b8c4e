"""Finite-difference audit scopes for the command-line gradient check.

Each scope builds a fresh real64 instance from its seed and measures the
worst relative error between tape gradients and central differences.
Scopes are grouped so the audit can run per op, per module, through one
block, or end to end through the micro models.  Inputs for kinked ops
(relu, abs, shrinkage) are sampled away from their non-differentiable
points.

Independent scopes run in parallel worker threads when the
``SIMBA_THREADS`` environment variable allows; tapes are thread-local, so
lanes never interact.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
import numpy as np

from . import gradcheck, model, spectral, ssm
from . import tensor as T
from . import train
from .errors import ConfigError
from .rng import substream
from .tensor import Tensor

TOLERANCE = gradcheck.DEFAULT_TOLERANCE


def worker_count() -> int:
    """Worker parallelism cap for data-independent lanes (>= 1)."""
    raw = os.environ.get("SIMBA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _rand(rng, shape, lo=-1.0, hi=1.0, avoid_zero=0.0):
    x = rng.uniform(lo, hi, size=shape)
    if avoid_zero:
        x = x + np.sign(x) * avoid_zero
    return Tensor(x, requires_grad=True)


def _weighted_sum(y: Tensor, rng) -> Tensor:
    w = Tensor(rng.uniform(-1.0, 1.0, size=y.shape))
    return T.sum_(T.mul(y, w))


# -- scope builders: each returns (loss_fn, leaves) -------------------------


def _scope_add(rng):
    a, b = _rand(rng, (3, 5)), _rand(rng, (5,))
    return lambda: _weighted_sum(T.add(a, b), np.random.default_rng(0)), [a, b]


def _scope_sub(rng):
    a, b = _rand(rng, (3, 5)), _rand(rng, (3, 5))
    return lambda: _weighted_sum(T.sub(a, b), np.random.default_rng(0)), [a, b]


def _scope_mul(rng):
    a, b = _rand(rng, (4, 3)), _rand(rng, (3,))
    return lambda: _weighted_sum(T.mul(a, b), np.random.default_rng(0)), [a, b]


def _scope_div(rng):
    a = _rand(rng, (4, 3))
    b = _rand(rng, (4, 3), lo=0.5, hi=1.5)
    return lambda: _weighted_sum(T.div(a, b), np.random.default_rng(0)), [a, b]


def _scope_matmul(rng):
    a, b = _rand(rng, (2, 3, 4)), _rand(rng, (4, 5))
    return lambda: _weighted_sum(T.matmul(a, b), np.random.default_rng(0)), [a, b]


def _scope_transpose(rng):
    a = _rand(rng, (2, 3, 4))
    return lambda: _weighted_sum(T.transpose(a, (2, 0, 1)), np.random.default_rng(0)), [a]


def _scope_reshape(rng):
    a = _rand(rng, (2, 6))
    return lambda: _weighted_sum(T.reshape(a, (3, 4)), np.random.default_rng(0)), [a]


def _scope_concat(rng):
    a, b = _rand(rng, (2, 3)), _rand(rng, (2, 2))
    return lambda: _weighted_sum(T.concat([a, b], axis=1), np.random.default_rng(0)), [a, b]


def _scope_slice(rng):
    a = _rand(rng, (4, 6))
    return lambda: _weighted_sum(a[1:3, ::2], np.random.default_rng(0)), [a]


def _scope_silu(rng):
    a = _rand(rng, (4, 5))
    return lambda: _weighted_sum(T.silu(a), np.random.default_rng(0)), [a]


def _scope_relu(rng):
    a = _rand(rng, (4, 5), avoid_zero=0.05)
    return lambda: _weighted_sum(T.relu(a), np.random.default_rng(0)), [a]


def _scope_softplus(rng):
    a = _rand(rng, (4, 5))
    return lambda: _weighted_sum(T.softplus(a), np.random.default_rng(0)), [a]


def _scope_sigmoid(rng):
    a = _rand(rng, (4, 5))
    return lambda: _weighted_sum(T.sigmoid(a), np.random.default_rng(0)), [a]


def _scope_exp(rng):
    a = _rand(rng, (4, 5))
    return lambda: _weighted_sum(T.exp(a), np.random.default_rng(0)), [a]


def _scope_log(rng):
    a = _rand(rng, (4, 5), lo=0.5, hi=2.0)
    return lambda: _weighted_sum(T.log(a), np.random.default_rng(0)), [a]


def _scope_abs(rng):
    a = _rand(rng, (4, 5), avoid_zero=0.05)
    return lambda: _weighted_sum(T.abs_(a), np.random.default_rng(0)), [a]


def _scope_mean(rng):
    a = _rand(rng, (3, 4, 5))
    return lambda: _weighted_sum(T.mean(a, axis=1), np.random.default_rng(0)), [a]


def _scope_layer_norm(rng):
    a = _rand(rng, (3, 7))
    return lambda: _weighted_sum(T.layer_norm(a), np.random.default_rng(0)), [a]


def _scope_dropout(rng):
    a = _rand(rng, (4, 6))
    # fixed mask stream: FD needs the same mask on every evaluation
    return (
        lambda: _weighted_sum(T.dropout(a, 0.4, True, np.random.default_rng(7)), np.random.default_rng(0)),
        [a],
    )


def _scope_fft_real(rng):
    a = _rand(rng, (2, 9, 3))
    def loss():
        s = spectral.fft_real(a, axis=1)
        return T.add(_weighted_sum(s.re, np.random.default_rng(0)),
                     _weighted_sum(s.im, np.random.default_rng(1)))
    return loss, [a]


def _scope_ifft_real(rng):
    re, im = _rand(rng, (2, 5, 3)), _rand(rng, (2, 5, 3))
    def loss():
        y = spectral.ifft_real(T.ComplexTensor(re, im), 8, axis=1)
        return _weighted_sum(y, np.random.default_rng(0))
    return loss, [re, im]


def _scope_emm(rng):
    i = _rand(rng, (6, 4, 8))
    w = _rand(rng, (4, 8, 8))
    return lambda: _weighted_sum(spectral.emm(i, w), np.random.default_rng(0)), [i, w]


def _scope_complex_gate(rng):
    hr, hi = _rand(rng, (5, 2, 6), avoid_zero=0.05), _rand(rng, (5, 2, 6), avoid_zero=0.05)
    wr, wi = _rand(rng, (2, 6, 6)), _rand(rng, (2, 6, 6))
    br, bi = _rand(rng, (2, 6)), _rand(rng, (2, 6))
    def loss():
        out = spectral.complex_gate_layer(
            T.ComplexTensor(hr, hi), T.ComplexTensor(wr, wi), T.ComplexTensor(br, bi), "relu"
        )
        return T.add(_weighted_sum(out.re, np.random.default_rng(0)),
                     _weighted_sum(out.im, np.random.default_rng(1)))
    return loss, [hr, hi, wr, wi, br, bi]


def _scope_soft_shrink(rng):
    # keep samples off the |x| = threshold kink
    x = rng.uniform(-1.0, 1.0, size=(5, 6))
    x = np.where(np.abs(np.abs(x) - 0.1) < 0.03, x + 0.06 * np.sign(x), x)
    a = Tensor(x, requires_grad=True)
    return lambda: _weighted_sum(spectral.soft_shrink(a, 0.1), np.random.default_rng(0)), [a]


def _scope_einfft(rng):
    p = spectral.init_einfft_params(substream(11, "audit"), channels=8, num_blocks=2, init_std=0.3)
    x = _rand(rng, (2, 6, 8))
    leaves = [x] + list(p.named_parameters().values())
    return lambda: _weighted_sum(spectral.einfft_forward(x, p), np.random.default_rng(0)), leaves


def _scope_conv1d(rng):
    x = _rand(rng, (2, 7, 4))
    w = _rand(rng, (4, 3))
    b = _rand(rng, (4,))
    return lambda: _weighted_sum(ssm.conv1d_depthwise(x, w, b), np.random.default_rng(0)), [x, w, b]


def _scope_selective_scan(rng):
    bsz, length, p, k = 2, 9, 3, 4
    x = _rand(rng, (bsz, length, p))
    delta = Tensor(np.exp(rng.uniform(-2.0, 0.0, (bsz, length, p))), requires_grad=True)
    a = Tensor(-np.exp(rng.uniform(-1.0, 1.0, (p, k))), requires_grad=True)
    bt, ct = _rand(rng, (bsz, length, k)), _rand(rng, (bsz, length, k))
    d = _rand(rng, (p,))
    def loss():
        y = ssm.selective_scan(x, delta, a, bt, ct, d)
        return _weighted_sum(y, np.random.default_rng(0))
    return loss, [x, delta, a, bt, ct, d]


def _scope_mamba_block(rng):
    p = ssm.init_ssm_params(substream(12, "audit"), dim=6, expand=2, state=4, init_std=0.15)
    x = _rand(rng, (2, 8, 6))
    leaves = [x] + list(p.named_parameters().values())
    return lambda: _weighted_sum(ssm.mamba_block(x, p), np.random.default_rng(0)), leaves


def _scope_block(rng):
    cfg = model.SimbaBlockConfig(dim=8, einfft_blocks=2, state=4)
    p = model.init_simba_block(substream(13, "audit"), cfg, init_std=0.15, dtype=T.REAL64)
    x = _rand(rng, (2, 8, 8))
    leaves = [x] + list(p.named_parameters().values())
    return lambda: _weighted_sum(model.simba_block(x, p), np.random.default_rng(0)), leaves


def _scope_model(rng):
    cfg = model.micro_vision_config(dtype=T.REAL64)
    m = model.VisionModel(cfg, substream(14, "audit"), init_std=0.08)
    images = Tensor(rng.uniform(0.0, 1.0, (2, 3, 32, 32)), requires_grad=True)
    labels = np.array([3, 7])
    leaves = [images] + list(m.named_parameters().values())
    def loss():
        logits = m.forward(images)
        return train.cross_entropy_smoothed(logits, labels, 0.1)
    return loss, leaves


def _scope_forecast_model(rng):
    cfg = model.ForecastConfig(
        num_channels=3, lookback=12, horizon=6, dim=8, depth=1, einfft_blocks=2, dtype=T.REAL64
    )
    m = model.ForecastModel(cfg, substream(15, "audit"), init_std=0.1)
    x = Tensor(rng.uniform(-1.0, 1.0, (2, 12, 3)), requires_grad=True)
    target = Tensor(rng.uniform(-1.0, 1.0, (2, 6, 3)))
    leaves = [x] + list(m.named_parameters().values())
    return lambda: train.mse(m.forward(x), target), leaves


_TENSOR_OPS = {
    "add": _scope_add, "sub": _scope_sub, "mul": _scope_mul, "div": _scope_div,
    "matmul": _scope_matmul, "transpose": _scope_transpose, "reshape": _scope_reshape,
    "concat": _scope_concat, "slice": _scope_slice, "silu": _scope_silu, "relu": _scope_relu,
    "softplus": _scope_softplus, "sigmoid": _scope_sigmoid, "exp": _scope_exp, "log": _scope_log,
    "abs": _scope_abs, "mean": _scope_mean, "layer_norm": _scope_layer_norm, "dropout": _scope_dropout,
}

_SPECTRAL_OPS = {
    "fft_real": _scope_fft_real, "ifft_real": _scope_ifft_real, "emm": _scope_emm,
    "complex_gate_layer": _scope_complex_gate, "soft_shrink": _scope_soft_shrink,
    "einfft": _scope_einfft,
}

_SSM_OPS = {
    "conv1d_depthwise": _scope_conv1d, "selective_scan": _scope_selective_scan,
    "mamba_block": _scope_mamba_block,
}

_COMPOSITE = {"block": _scope_block, "model": _scope_model, "forecast_model": _scope_forecast_model}

_ALL = {**_TENSOR_OPS, **_SPECTRAL_OPS, **_SSM_OPS, **_COMPOSITE}

_GROUPS = {
    "tensor": list(_TENSOR_OPS),
    "spectral": list(_SPECTRAL_OPS),
    "ssm": list(_SSM_OPS),
    "block": ["block"],
    "model": ["model", "forecast_model"],
    "all": list(_ALL),
}

# coordinate budget: full sweep for small scopes, sampled for big ones
_COORD_CAP = {"model": 12, "forecast_model": 40, "block": 60, "einfft": 80, "mamba_block": 80}

# compositions with uncontrollable relu/shrink kink positions use
# two-scale quotient validation (see gradcheck.max_rel_error)
_FILTER_KINKS = {"model", "forecast_model", "block", "einfft"}


def available_scopes() -> list[str]:
    return sorted(set(_ALL) | set(_GROUPS))


def run_scope(name: str, seed: int = 0) -> float:
    """Max relative FD error for one scope."""
    if name not in _ALL:
        raise ConfigError("scope", f"unknown scope {name!r}; choose from {available_scopes()}")
    rng = substream(seed, f"audit-{name}")
    loss_fn, leaves = _ALL[name](rng)
    cap = _COORD_CAP.get(name)
    return gradcheck.max_rel_error(
        loss_fn,
        leaves,
        max_coords_per_leaf=cap,
        rng=np.random.default_rng(seed),
        filter_kinks=name in _FILTER_KINKS,
    )


def run_audit(scope: str, seed: int = 0) -> list[tuple[str, float]]:
    """Run one scope, a group, or everything; returns (name, error) pairs."""
    if scope in _GROUPS:
        names = _GROUPS[scope]
    elif scope in _ALL:
        names = [scope]
    else:
        raise ConfigError("scope", f"unknown scope {scope!r}; choose from {available_scopes()}")
    workers = min(worker_count(), len(names))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            errs = list(pool.map(lambda n: run_scope(n, seed), names))
        return list(zip(names, errs))
    return [(name, run_scope(name, seed)) for name in names]
