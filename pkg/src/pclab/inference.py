"""Relaxation of the value nodes by gradient descent on the energy."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DivergenceError
from .pcgraph import PCState, PrecisionSchedule, energy, refresh_errors


@dataclass(frozen=True)
class InferenceConfig:
    """``T`` updates of the hidden value nodes with step ``lr_x`` and heavy-ball
    momentum.  ``last_layer_lr_decay`` uses ``lr_x ** s`` for the top hidden
    layer on the s-th update.  ``cache_bn_stats`` pins batch-norm statistics
    to those of the feed-forward pass instead of recomputing them per step.
    """

    T: int
    lr_x: float
    momentum_x: float = 0.0
    last_layer_lr_decay: bool = False
    convergence_tol: Optional[float] = None
    cache_bn_stats: bool = False
    bn_phase: str = "inference"

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not self.lr_x >= 0:
            raise ValueError("lr_x must be non-negative")
        if not 0 <= self.momentum_x < 1:
            raise ValueError("momentum_x must lie in [0, 1)")


def activity_gradients(net, state: PCState, sigmas) -> list:
    """``dE/dx^l`` for hidden layers (per-sample scale, index 1..L-1).

    ``eps[l]/Sigma^l - J_{l+1}^T (eps[l+1]/Sigma^{l+1})``; a layer whose
    error and upstream error are both exactly zero gets an exact zero.
    """
    L = state.L
    grads = [None] * L
    for l in range(1, L):
        e_own = state.eps[l]
        e_up = state.eps[l + 1]
        up_nonzero = e_up.any()
        if not up_nonzero and not e_own.any():
            grads[l] = np.zeros_like(state.x[l])
            continue
        g = e_own / e_own.dtype.type(sigmas[l])
        if up_nonzero:
            u = e_up / e_up.dtype.type(sigmas[l + 1])
            g = g - net[l + 1].backward(u, state.caches[l + 1])[0]
        grads[l] = g
    return grads


def _bn_stats0(state):
    return [None] + [c.bn_stats for c in state.caches0[1:]]


def relax_step(net, state: PCState, schedule: PrecisionSchedule, cfg: InferenceConfig, t=None) -> PCState:
    """Descend the energy of ``x_t`` once, producing ``x_{t+1}``.

    All hidden layers move simultaneously from the step-``t`` snapshot; the
    input and output value nodes stay clamped.
    """
    t = state.t if t is None else t
    L = state.L
    T = state.T if state.T is not None else cfg.T
    sig = schedule.sigmas(t, L, max(T, t))
    grads = activity_gradients(net, state, sig)
    moved = []
    m = cfg.momentum_x
    for l in range(1, L):
        g = grads[l]
        lr = cfg.lr_x ** (t + 1) if (cfg.last_layer_lr_decay and l == L - 1) else cfg.lr_x
        v = state.velocity[l]
        if m:
            v = v * v.dtype.type(m) + g
        else:
            v = g
        state.velocity[l] = v
        if v.any():
            state.x[l] = state.x[l] - v.dtype.type(lr) * v
            moved.append(l)
    stats = _bn_stats0(state) if cfg.cache_bn_stats else None
    refresh_errors(state, net, cfg.bn_phase, stats, layers=[l + 1 for l in moved])
    state.t = t + 1
    return state


def _check(report, batch=None):
    if not np.isfinite(report.total):
        bad = int(np.argmin(np.isfinite(report.per_layer))) + 1
        raise DivergenceError(
            f"energy became non-finite at t={report.t} (first offending layer {bad})",
            layer=bad, batch=batch,
        )


def relax(net, state: PCState, schedule: PrecisionSchedule, cfg: InferenceConfig, batch=None):
    """Run up to ``cfg.T`` steps; stop early once ``|E_t - E_{t-1}| < tol``.

    Returns the state and one energy report per executed step (the energy
    of the state each step produced).
    """
    state.T = cfg.T
    trace = []
    prev = energy(state, schedule, T=cfg.T).total
    for t in range(state.t, cfg.T):
        relax_step(net, state, schedule, cfg, t)
        rep = energy(state, schedule, T=cfg.T)
        _check(rep, batch)
        trace.append(rep)
        if cfg.convergence_tol is not None and abs(rep.total - prev) < cfg.convergence_tol:
            break
        prev = rep.total
    return state, trace
