"""One object that drives the three-phase predictive-coding loop (or plain
backprop) over mini-batches.  Shared by the experiment runner and the
scikit-learn style estimators."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import bpref, learning, pcgraph
from .errors import ConfigError, DivergenceError, StateError
from .inference import InferenceConfig, relax
from .learning import AdamW, LearningConfig, flatten_grads, warmup_cosine_lr
from .pcgraph import OutputNudging, PrecisionSchedule

ALGOS = ("bp", "pc", "pc-d", "pc-s", "pc-f", "pc-df", "pc-sf")
BN_MODES = ("standard", "freeze", "off")


def algo_parts(algo: str):
    """``(schedule kind, update rule)`` for an algorithm name; bp gives None."""
    if algo not in ALGOS:
        raise ConfigError(f"unknown algo {algo!r}; choose from {ALGOS}")
    if algo == "bp":
        return None, None
    flags = algo[3:]
    kind = "decaying" if "d" in flags else "spiking" if "s" in flags else "uniform"
    rule = "forward" if "f" in flags else "standard"
    return kind, rule


def make_schedule(kind, lr_x, k=1.0, spike_alpha=None, beta=None, center=False,
                  hidden_only=True):
    nudge = OutputNudging(beta, center) if beta is not None else None
    if kind == "spiking":
        return PrecisionSchedule.spiking(spike_alpha if spike_alpha is not None else lr_x,
                                         output_nudging=nudge, hidden_only=hidden_only)
    if kind == "decaying":
        return PrecisionSchedule.decaying(k, output_nudging=nudge, hidden_only=hidden_only)
    return PrecisionSchedule.uniform(output_nudging=nudge)


def _digest(arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


@dataclass
class StepResult:
    energies: np.ndarray
    logits0: np.ndarray
    trace: Optional[list] = None


class Trainer:
    """Holds the network, optimiser and schedules for one training run.

    ``bn_mode`` is ``freeze`` (running statistics written only in the
    learning phase), ``standard`` (every training-time normalisation
    writes them) or ``off`` (the network has no BN layers).
    """

    def __init__(self, net, algo="pc", inference: Optional[InferenceConfig] = None,
                 learn: Optional[LearningConfig] = None, schedule: Optional[PrecisionSchedule] = None,
                 bn_mode="freeze", total_steps=0, bp_loss="cross_entropy", seed=0,
                 check_phases=False):
        if bn_mode not in BN_MODES:
            raise ConfigError(f"bn must be one of {BN_MODES}")
        self.net = net
        self.algo = algo
        kind, rule = algo_parts(algo)
        self.inference = inference
        if algo != "bp" and inference is None:
            raise ConfigError("predictive-coding algorithms need an InferenceConfig")
        self.learn = learn or LearningConfig(update_rule=rule or "standard")
        if rule is not None and self.learn.update_rule != rule:
            raise ConfigError(f"algo {algo} implies update rule {rule}")
        self.schedule = schedule or (make_schedule(kind, inference.lr_x) if kind else None)
        self.bn_mode = bn_mode
        self.total_steps = total_steps
        self.bp_loss = bp_loss
        self.opt = AdamW(eps=self.learn.adam_eps)
        self.step = 0
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.check_phases = check_phases

    @property
    def is_bp(self):
        return self.algo == "bp"

    def lr(self):
        return warmup_cosine_lr(self.step, self.total_steps, self.learn.lr_w,
                                self.learn.warmup_frac, self.learn.peak_factor,
                                self.learn.final_factor)

    def _apply(self, layer_grads):
        params = self.net.parameters()
        self.opt.step(params, flatten_grads(layer_grads), self.lr(), self.learn.weight_decay_w)
        for name, p in params.items():
            if not np.all(np.isfinite(p)):
                raise DivergenceError(f"parameter {name} became non-finite",
                                      layer=int(name.split(".")[0][1:]))
        self.step += 1

    # -- predictive coding -------------------------------------------------

    def relax_batch(self, x, y_onehot):
        """Initialise, clamp and relax one batch without touching parameters."""
        phase = "learning" if self.bn_mode == "standard" else "inference"
        icfg = self.inference
        if icfg.bn_phase != phase:
            icfg = replace(icfg, bn_phase=phase)
        state = pcgraph.init_forward(self.net, x, phase)
        pcgraph.clamp_output(state, y_onehot, self.schedule, self.rng)
        state, trace = relax(self.net, state, self.schedule, icfg)
        return state, trace

    def pc_step(self, x, y_onehot, keep_trace=False) -> StepResult:
        bns = self.net.bn_layers()
        frozen = self.bn_mode == "freeze"
        for bn in bns:
            bn.frozen = frozen
        if self.check_phases:
            p_before = self.net.checksum(include_running=frozen)
        state, trace = self.relax_batch(x, y_onehot)
        for bn in bns:
            bn.frozen = False
        if self.check_phases and self.net.checksum(include_running=frozen) != p_before:
            raise StateError("parameters or frozen statistics changed during relaxation")
        rule = self.learn.update_rule
        T = state.t
        if rule == "forward":
            grads = learning.weight_grads_forward(state, self.net, self.schedule, T,
                                                  self.learn.forward_sigma_t,
                                                  self.learn.train_bn_affine)
        else:
            grads = learning.weight_grads_standard(state, self.net, self.schedule, T,
                                                   self.learn.train_bn_affine)
        if self.check_phases:
            x_before = _digest(state.x)
        if frozen:
            learning.bn_learning_update(self.net, state, rule)
        self._apply(grads)
        if self.check_phases and _digest(state.x) != x_before:
            raise StateError("activities changed during the weight step")
        energies = trace[-1].per_layer if trace else pcgraph.energy(state, self.schedule).per_layer
        return StepResult(energies, state.mu0[-1], trace if keep_trace else None)

    # -- backprop ----------------------------------------------------------

    def bp_step(self, x, y_onehot) -> StepResult:
        phase = "inference" if self.bn_mode == "off" else "learning"
        logits, tape = bpref.bp_forward(self.net, x, phase, self.bp_loss)
        grads, sq, _ = bpref.bp_backward(self.net, tape, y_onehot)
        self._apply(grads)
        return StepResult(sq, logits)

    def train_batch(self, x, y_onehot, keep_trace=False) -> StepResult:
        if self.is_bp:
            return self.bp_step(x, y_onehot)
        return self.pc_step(x, y_onehot, keep_trace)

    def probe(self, x, y_onehot):
        """Per-step layer energies of one batch with parameters and running
        statistics left untouched (``[E_0, E_1, ..., E_T]``); for backprop
        the single row of per-layer squared errors."""
        bns = self.net.bn_layers()
        saved = [(bn.frozen, bn.updates) for bn in bns]
        for bn in bns:
            bn.frozen = True
        try:
            if self.is_bp:
                logits, tape = bpref.bp_forward(self.net, x, "inference", self.bp_loss)
                _, sq, _ = bpref.bp_backward(self.net, tape, y_onehot)
                return [sq.tolist()]
            rng_state = self.rng.bit_generator.state
            state = pcgraph.init_forward(self.net, x, "inference")
            pcgraph.clamp_output(state, y_onehot, self.schedule, self.rng)
            state.T = self.inference.T
            e0 = pcgraph.energy(state, self.schedule, T=self.inference.T)
            icfg = replace(self.inference, bn_phase="inference")
            state, trace = relax(self.net, state, self.schedule, icfg)
            self.rng.bit_generator.state = rng_state
            return [e0.per_layer.tolist()] + [r.per_layer.tolist() for r in trace]
        finally:
            for bn, (fz, up) in zip(bns, saved):
                bn.frozen, bn.updates = fz, up


def predict_logits(net, x, batch_size=1024):
    """Feed-forward logits with batch norm in eval mode."""
    out = []
    for s in range(0, len(x), batch_size):
        out.append(net.forward(np.asarray(x[s:s + batch_size], dtype=net.dtype), "eval"))
    return np.concatenate(out) if out else np.zeros((0, net.output_size), dtype=net.dtype)


def topk_accuracy(logits, labels, k=1) -> float:
    if len(labels) == 0:
        return float("nan")
    k = min(k, logits.shape[1])
    top = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(top == np.asarray(labels)[:, None], axis=1)))
