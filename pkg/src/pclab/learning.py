"""Weight updates after relaxation, AdamW and the warmup-cosine schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import StateError
from .pcgraph import PCState, PrecisionSchedule, forward_residuals

UPDATE_RULES = ("standard", "forward")


@dataclass(frozen=True)
class LearningConfig:
    lr_w: float = 1e-3
    weight_decay_w: float = 1e-4
    update_rule: str = "standard"
    warmup_frac: float = 0.1
    peak_factor: float = 1.1
    final_factor: float = 0.1
    # time index of the covariance dividing forward residuals; None means T
    forward_sigma_t: Optional[int] = None
    train_bn_affine: bool = True
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.adam_eps > 0:
            raise ValueError("adam_eps must be positive")
        if not self.lr_w > 0:
            raise ValueError("lr_w must be positive")
        if self.update_rule not in UPDATE_RULES:
            raise ValueError(f"update_rule must be one of {UPDATE_RULES}")


def _layer_grads(net, l, err, sigma, cache, train_bn_affine):
    B = err.shape[0]
    dout = err * err.dtype.type(-1.0 / (sigma * B))
    _, g = net[l].backward(dout, cache, need_input=False)
    if not train_bn_affine:
        g.pop("bn_gamma", None)
        g.pop("bn_beta", None)
    return g


def weight_grads_standard(state: PCState, net, schedule: PrecisionSchedule, T=None,
                          train_bn_affine=True) -> list:
    """``dE_T/dtheta^l`` for every layer (index 1..L), batch mean.

    Dense case: ``-(eps^l / Sigma^l_T) f(x^{l-1}_T)^T``.
    """
    T = state.t if T is None else T
    sig = schedule.sigmas(T, state.L, max(T, state.T or T))
    return [None] + [
        _layer_grads(net, l, state.eps[l], sig[l], state.caches[l], train_bn_affine)
        for l in range(1, state.L + 1)
    ]


def weight_grads_forward(state: PCState, net, schedule: PrecisionSchedule, T=None,
                         sigma_t=None, train_bn_affine=True) -> list:
    """Gradient of the forward-update energy with ``x_T`` held fixed and
    ``mu_0`` as the parameter-dependent term: dense case
    ``-((x^l_T - mu^l_0) / Sigma^l) f(x^{l-1}_0)^T``."""
    if state.caches0 is None or len(state.caches0) != state.L + 1:
        raise StateError("initial predictions are missing")
    res = forward_residuals(state)
    T = state.t if T is None else T
    ts = T if sigma_t is None else sigma_t
    sig = schedule.sigmas(ts, state.L, max(T, ts, state.T or T))
    return [None] + [
        _layer_grads(net, l, res[l], sig[l], state.caches0[l], train_bn_affine)
        for l in range(1, state.L + 1)
    ]


def bn_learning_update(net, state: PCState, rule="standard"):
    """Learning-phase pass: fold the batch statistics of the activities the
    weight step used into each BN layer's running averages, once."""
    caches = state.caches0 if rule == "forward" else state.caches
    for l in range(1, state.L + 1):
        bn = net[l].bn
        if bn is not None and caches[l].bn_stats is not None:
            bn.update_running(*caches[l].bn_stats)


@dataclass
class AdamW:
    """Adaptive moments with bias correction and decoupled weight decay:
    ``p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)``."""

    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict, lr: float, weight_decay: float = 0.0):
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, g in grads.items():
            p = params[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            dt = p.dtype.type
            m *= dt(b1)
            m += dt(1 - b1) * g
            v *= dt(b2)
            v += dt(1 - b2) * (g * g)
            upd = (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(self.eps))
            if weight_decay:
                upd = upd + dt(weight_decay) * p
            p -= dt(lr) * upd
        return params


def optimizer_step(opt: AdamW, params: dict, grads: dict, lr: float, weight_decay: float = 0.0):
    return opt.step(params, grads, lr, weight_decay)


def flatten_grads(layer_grads) -> dict:
    """Per-layer gradient dicts -> ``{"l{i}.name": array}`` matching
    ``Network.parameters``."""
    out = {}
    for i, g in enumerate(layer_grads):
        if g:
            for k, v in g.items():
                out[f"l{i}.{k}"] = v
    return out


def warmup_cosine_lr(step, total_steps, base_lr, warmup_frac=0.1, peak_factor=1.1,
                     final_factor=0.1) -> float:
    """Linear ramp from ``base`` to ``peak_factor * base`` over the first
    ``warmup_frac`` of steps, cosine decay to ``final_factor * base`` at
    ``total_steps``, constant afterwards."""
    peak = peak_factor * base_lr
    final = final_factor * base_lr
    if total_steps <= 0 or step >= total_steps:
        return final
    warm = warmup_frac * total_steps
    if step < warm:
        return base_lr + (peak - base_lr) * step / warm
    frac = (step - warm) / (total_steps - warm)
    return final + 0.5 * (peak - final) * (1.0 + math.cos(math.pi * frac))
