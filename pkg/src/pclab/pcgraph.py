"""Predictive-coding state, precision schedules and the layer energies.

Time convention: ``x_t`` is the state after ``t`` activity updates, so
``x_0`` is the feed-forward initialisation and ``x_T`` the relaxed state.
The energy of ``x_t`` weights layer ``l`` by ``1 / Sigma^l_t``; the update
that produces ``x_{t+1}`` descends that energy, and the learning phase
uses ``Sigma^l_T``.  Under this clock the output error exists at ``t = 0``
and reaches hidden layer ``l`` at ``t = L - l``, which is exactly where the
spiking and decaying schedules put their largest precision.

The schedules act on hidden layers only by default; the output layer's
covariance is 1 unless set through ``output_sigma`` (the nudging knob).
``hidden_only=False`` extends the formulas to ``l = L`` as well.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ScheduleError, StateError

SCHEDULE_KINDS = ("uniform", "spiking", "decaying")


@dataclass(frozen=True)
class OutputNudging:
    """Clamp the output to ``mu0 + beta (y - mu0)``; with ``center`` the sign
    of ``beta`` is drawn per batch."""

    beta: float
    center: bool = False


@dataclass(frozen=True)
class PrecisionSchedule:
    """Per-layer, per-time covariance ``Sigma^l_t`` (errors are divided by it).

    ``alpha`` is the spike value (normally the activity learning rate),
    ``k`` the decay rate.  ``output_sigma`` pins the output layer's
    covariance for every ``t``, which expresses nudging as precision;
    ``hidden_only`` keeps the schedule off the output layer.
    """

    kind: str = "uniform"
    alpha: Optional[float] = None
    k: Optional[float] = None
    output_nudging: Optional[OutputNudging] = None
    output_sigma: Optional[float] = None
    hidden_only: bool = True

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ScheduleError(f"unknown precision schedule {self.kind!r}")
        if self.kind == "spiking" and not (self.alpha is not None and self.alpha > 0):
            raise ScheduleError("spiking precision needs alpha > 0")
        if self.kind == "decaying" and not (self.k is not None and self.k > 0):
            raise ScheduleError("decaying precision needs k > 0")
        if self.output_sigma is not None and self.output_sigma <= 0:
            raise ScheduleError("output_sigma must be positive")

    @classmethod
    def uniform(cls, **kw):
        return cls("uniform", **kw)

    @classmethod
    def spiking(cls, alpha, **kw):
        return cls("spiking", alpha=alpha, **kw)

    @classmethod
    def decaying(cls, k, **kw):
        return cls("decaying", k=k, **kw)

    def sigma(self, l: int, t: int, L: int, T: int) -> float:
        return precision_at(self, l, t, L, T)

    def sigmas(self, t: int, L: int, T: int) -> np.ndarray:
        """``Sigma^l_t`` for l = 0..L (entry 0 unused, set to 1)."""
        out = np.ones(L + 1)
        for l in range(1, L + 1):
            out[l] = precision_at(self, l, t, L, T)
        return out


def _decaying(k, l, t, L, T):
    if l < L - t:
        return 1.0
    norm = sum(math.exp(-k * j) for j in range(T - L + l + 1))
    try:
        return norm * math.exp(k * (l - L + t))
    except OverflowError:
        return math.inf


def precision_at(schedule: PrecisionSchedule, l: int, t: int, L: int, T: int) -> float:
    """Covariance of layer ``l`` at time ``t`` (0 <= t <= T, 1 <= l <= L).

    uniform: 1.  spiking: ``alpha`` when ``l == L - t``, else 1.
    decaying: ``sum_{j=0}^{T-L+l} e^{-kj} / e^{-k(l-L+t)}`` once
    ``l >= L - t``, else 1; inverses sum to one over ``t = L-l..T``.
    The output layer gets 1 (or ``output_sigma``) unless the schedule has
    ``hidden_only=False``.
    """
    if not 1 <= l <= L:
        raise ScheduleError(f"layer {l} outside 1..{L}")
    if not 0 <= t <= T:
        raise ScheduleError(f"time {t} outside 0..{T}")
    if l == L and schedule.output_sigma is not None:
        return float(schedule.output_sigma)
    if schedule.kind == "uniform" or (l == L and schedule.hidden_only):
        s = 1.0
    elif schedule.kind == "spiking":
        s = float(schedule.alpha) if l == L - t else 1.0
    else:
        s = _decaying(schedule.k, l, t, L, T)
    if not (s > 0 and math.isfinite(s)):
        raise ScheduleError(f"non-positive precision at layer {l}, t={t}: {s}")
    return s


@dataclass
class EnergyReport:
    per_layer: np.ndarray
    total: float
    t: int


@dataclass
class PCState:
    """Value nodes ``x[0..L]``, predictions and errors ``mu[l]``, ``eps[l]``
    (index 0 unused) and the frozen feed-forward predictions ``mu0``.

    ``caches[l]`` holds the forward cache of layer ``l`` at the current
    ``x[l-1]``; ``caches0`` the cache at initialisation.
    """

    x: list
    mu: list
    eps: list
    mu0: tuple
    caches: list
    caches0: tuple
    t: int = 0
    T: Optional[int] = None
    velocity: list = field(default_factory=list)
    clamped: bool = False
    beta_used: Optional[float] = None

    @property
    def L(self) -> int:
        return len(self.x) - 1

    @property
    def batch_size(self) -> int:
        return self.x[0].shape[0]


def init_forward(net, o, bn_phase="inference") -> PCState:
    """Feed-forward initialisation ``x_0 = mu_0``, ``x^0 = o``."""
    o = np.asarray(o, dtype=net.dtype)
    x = [o]
    mu = [None]
    caches = [None]
    for l in range(1, net.L + 1):
        m, c = net[l].forward(x[l - 1], bn_phase)
        mu.append(m)
        caches.append(c)
        x.append(m.copy())
    eps = [None] + [np.zeros_like(m) for m in mu[1:]]
    velocity = [None] + [np.zeros_like(m) for m in mu[1:]]
    return PCState(x, mu, eps, tuple(mu), caches, tuple(caches), 0, None, velocity)


def clamp_output(state: PCState, y, schedule: PrecisionSchedule, rng=None) -> PCState:
    """Fix the output value node to the target (or the nudged target)."""
    L = state.L
    y = np.asarray(y, dtype=state.x[L].dtype).reshape(state.x[L].shape)
    nudge = schedule.output_nudging
    if nudge is None:
        state.x[L] = y.copy()
        state.beta_used = None
    else:
        beta = nudge.beta
        if nudge.center:
            if rng is None:
                raise StateError("center nudging needs an rng")
            beta = beta if rng.random() < 0.5 else -beta
        b = y.dtype.type(beta)
        mu0 = state.mu0[L]
        state.x[L] = mu0 + b * (y - mu0)
        state.beta_used = beta
    state.eps[L] = state.x[L] - state.mu[L]
    state.clamped = True
    return state


def refresh_errors(state: PCState, net, bn_phase="inference", bn_stats=None, layers=None) -> PCState:
    """Recompute ``mu[l]`` from ``x[l-1]`` and ``eps[l] = x[l] - mu[l]``.

    ``layers`` restricts the recomputation to the listed indices (the
    others keep their predictions); ``bn_stats[l]`` pins batch-norm
    statistics instead of recomputing them.
    """
    for l in layers if layers is not None else range(1, state.L + 1):
        stats = bn_stats[l] if bn_stats is not None else None
        m, c = net[l].forward(state.x[l - 1], bn_phase, bn_stats=stats)
        state.mu[l] = m
        state.caches[l] = c
    for l in range(1, state.L + 1):
        state.eps[l] = state.x[l] - state.mu[l]
    return state


def _half_sq(e):
    e = e.reshape(e.shape[0], -1).astype(np.float64)
    return 0.5 * float(np.einsum("ij,ij->", e, e)) / e.shape[0]


def layer_energies(errors, sigmas) -> np.ndarray:
    """``1/2 mean_b ||e_b||^2 / sigma`` per layer for errors indexed 1..L."""
    return np.array([_half_sq(errors[l]) / sigmas[l] for l in range(1, len(errors))])


def energy(state: PCState, schedule: PrecisionSchedule, t=None, T=None) -> EnergyReport:
    """Precision-weighted energy of the current state (batch mean)."""
    t = state.t if t is None else t
    T = (state.T if state.T is not None else t) if T is None else T
    sig = schedule.sigmas(t, state.L, max(T, t))
    per = layer_energies(state.eps, sig)
    return EnergyReport(per, float(per.sum()), t)


def forward_residuals(state: PCState) -> list:
    """``x[l] - mu0[l]`` for l = 1..L (index 0 is None)."""
    if state.mu0 is None or len(state.mu0) != len(state.x):
        raise StateError("initial predictions are missing")
    return [None] + [state.x[l] - state.mu0[l] for l in range(1, state.L + 1)]
