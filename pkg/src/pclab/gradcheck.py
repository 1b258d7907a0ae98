"""Finite-difference verification of the activity gradients and of both
weight-update rules on small random networks.

The analytic side runs in the network's own dtype; the central-difference
oracle always evaluates the energies in float64 on an upcast copy, so the
comparison measures the analytic path and not float32 cancellation in the
oracle.  Errors are reported as ``max|a - n| / max(max|n|, max|a|)`` per
gradient block.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import ndtensor as nd
from .inference import InferenceConfig, activity_gradients, relax
from .layers import Activation, BatchNormState, ConvBlock, DenseLayer, Network
from .learning import weight_grads_forward, weight_grads_standard
from .pcgraph import PrecisionSchedule, clamp_output, init_forward, layer_energies

ACTIVATION_MENU = ("relu", "leaky_relu", "gelu", "hard_tanh")


@dataclass
class CheckResult:
    kind: str
    layer: int
    name: str
    error: float
    coordinate: tuple


@dataclass
class GradcheckReport:
    tolerance: float
    results: list = field(default_factory=list)

    @property
    def worst(self):
        return max(self.results, key=lambda r: r.error) if self.results else None

    def max_error(self, kind=None) -> float:
        errs = [r.error for r in self.results if kind is None or r.kind == kind]
        return max(errs) if errs else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error() <= self.tolerance

    def summary(self) -> str:
        lines = [f"{k:9s} max rel err {self.max_error(k):.3e}" for k in ("activity", "standard", "forward")]
        w = self.worst
        status = "PASS" if self.passed else "FAIL"
        if w is not None:
            lines.append(f"{status}: worst {w.kind} layer {w.layer} {w.name} at {w.coordinate} "
                         f"({w.error:.3e}, tolerance {self.tolerance:.0e})")
        return "\n".join(lines)


def to_float64(net: Network) -> Network:
    net64 = copy.deepcopy(net)
    for b in net64.blocks:
        for k in b.params:
            b.params[k] = b.params[k].astype(np.float64)
        if b.bn is not None:
            for k in ("gamma", "beta", "running_mean", "running_var"):
                setattr(b.bn, k, getattr(b.bn, k).astype(np.float64))
    return net64


def random_network(rng, act="relu", kind="dense", bn=False, dtype=np.float32) -> Network:
    """Small random net: ``dense`` (3-4 layers, <= 16 units) or ``conv``
    (conv+pool+BN, conv, dense)."""
    a = Activation(act)
    if kind == "conv":
        blocks = [ConvBlock((2, 4, 4), 3, 3, 1, 1, True, a,
                            BatchNormState.create(3, dtype) if bn else None, rng, dtype)]
        blocks.append(ConvBlock(blocks[-1].out_shape, 4, 3, 1, 1, False, a,
                                BatchNormState.create(4, dtype) if bn else None, rng, dtype))
        blocks.append(DenseLayer(blocks[-1].out_shape, 5, a, None, rng, dtype))
        net = Network(blocks, (2, 4, 4), name="gc-conv")
    else:
        depth = int(rng.integers(3, 5))
        widths = [int(rng.integers(4, 17)) for _ in range(depth)]
        shape = (6,)
        blocks = []
        for i, w in enumerate(widths):
            norm = BatchNormState.create(w, dtype) if bn and i < depth - 1 else None
            blocks.append(DenseLayer(shape, w, a, norm, rng, dtype))
            shape = (w,)
        net = Network(blocks, (6,), name="gc-dense")
    # non-trivial biases and BN affine parameters
    for b in net.blocks:
        bias = b.params.get("b", b.params.get("bias"))
        bias[...] = rng.normal(0, 0.1, bias.shape)
        if b.bn is not None:
            b.bn.gamma[...] = rng.uniform(0.5, 1.5, b.bn.gamma.shape)
            b.bn.beta[...] = rng.normal(0, 0.1, b.bn.beta.shape)
    return net


def _relerr(a, n, floor=0.0):
    scale = max(float(np.max(np.abs(n))), float(np.max(np.abs(a))), floor, 1e-30)
    diff = np.abs(a.astype(np.float64) - n)
    idx = np.unravel_index(int(np.argmax(diff)), diff.shape)
    return float(diff[idx]) / scale, tuple(int(i) for i in idx)


def _coords(shape, rng, limit):
    n = int(np.prod(shape))
    flat = np.arange(n) if n <= limit else rng.choice(n, size=limit, replace=False)
    return [np.unravel_index(int(i), shape) for i in np.sort(flat)]


_KINKS = {"relu": (0.0,), "leaky_relu": (0.0,), "hard_tanh": (-1.0, 1.0)}


def _near_kink(act, v, h):
    return any(abs(v - k) < 10 * h for k in _KINKS.get(act.kind, ()))


def _central(f, arr, idx, h, order=2):
    """Central difference of ``f()`` in ``arr[idx]``; ``order=4`` uses the
    five-point stencil, which tolerates a larger ``h``."""
    old = arr[idx]

    def at(d):
        arr[idx] = old + d
        return f()

    if order == 4:
        d = (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h)
    else:
        d = (at(h) - at(-h)) / (2 * h)
    arr[idx] = old
    return d


def _energy64(net64, xs, sig):
    """Batch-mean energy of value nodes ``xs`` (float64)."""
    errs = [None]
    for l in range(1, net64.L + 1):
        mu, _ = net64[l].forward(xs[l - 1], "inference")
        errs.append(xs[l] - mu)
    return float(layer_energies(errs, sig).sum())


def check_network(net: Network, schedule: PrecisionSchedule, rng, batch=4, steps=None,
                  lr_x=0.1, h=1e-6, coord_limit=24, tolerance=1e-3, report=None):
    """Relax a random batch, then compare analytic gradients with central
    differences.  Appends to and returns ``report``."""
    report = report or GradcheckReport(tolerance)
    dtype = net.dtype
    o = rng.normal(size=(batch,) + tuple(net.input_shape)).astype(dtype)
    y = rng.normal(size=(batch, net.output_size)).astype(dtype)
    steps = steps or net.L + 1
    state = init_forward(net, o)
    clamp_output(state, y, schedule)
    state, _ = relax(net, state, schedule, InferenceConfig(steps, lr_x))
    T = state.t
    sig = schedule.sigmas(T, net.L, T)
    B = batch

    net64 = to_float64(net)
    xs = [x.astype(np.float64) for x in state.x]
    x0 = [o.astype(np.float64)] + [m.astype(np.float64) for m in state.mu0[1:]]

    # activity gradients: analytic is d(B * E)/dx.  The total energy can be
    # dominated by layers that do not depend on x^l, so a wider five-point
    # stencil keeps its rounding error out of the comparison.
    ha = 100 * h
    ga = activity_gradients(net, state, sig)
    for l in range(1, net.L):
        num = np.zeros_like(xs[l])
        act = net[l + 1].act
        for idx in _coords(xs[l].shape, rng, coord_limit):
            if _near_kink(act, xs[l][idx], 2 * ha):
                continue
            num[idx] = B * _central(lambda: _energy64(net64, xs, sig), xs[l], idx, ha, order=4)
        sel = num != 0
        err, c = _relerr(np.where(sel, ga[l], 0), np.where(sel, num, 0))
        report.results.append(CheckResult("activity", l, "x", err, c))

    # standard rule: E_T with activities fixed; forward rule: x_T fixed, mu_0 from x_0
    gs = weight_grads_standard(state, net, schedule, T)
    gf = weight_grads_forward(state, net, schedule, T)
    for kind, grads, inputs in (("standard", gs, xs), ("forward", gf, x0)):
        for l in range(1, net.L + 1):
            blk64 = net64[l]

            def layer_energy():
                mu, _ = blk64.forward(inputs[l - 1], "inference")
                e = xs[l] - mu
                return 0.5 * float(np.sum(e * e)) / B / sig[l]

            params64 = blk64.parameters()
            # a bias feeding batch norm has an identically zero gradient, so
            # every block is measured against the layer's largest entry
            floor = max(float(np.max(np.abs(g))) for g in grads[l].values())
            for name, g in grads[l].items():
                p = params64[name]
                num = np.zeros_like(p)
                for idx in _coords(p.shape, rng, coord_limit):
                    num[idx] = _central(layer_energy, p, idx, h)
                sel = num != 0
                err, c = _relerr(np.where(sel, g, 0), np.where(sel, num, 0), floor)
                report.results.append(CheckResult(kind, l, name, err, c))
    return report


def gradcheck(n_nets=20, dtype=np.float32, seed=0, tolerance=None, schedules=None):
    """Run the suite over ``n_nets`` random networks cycling through every
    activation, dense and conv+pool+BN layouts and the three precision
    schedules."""
    tolerance = tolerance if tolerance is not None else (1e-3 if dtype == np.float32 else 1e-6)
    rng = nd.make_rng(seed)
    report = GradcheckReport(tolerance)
    schedules = schedules or [PrecisionSchedule.uniform(), PrecisionSchedule.spiking(0.5),
                              PrecisionSchedule.decaying(1.0)]
    layouts = [("dense", False), ("dense", True), ("conv", True), ("conv", False)]
    for i in range(n_nets):
        act = ACTIVATION_MENU[i % len(ACTIVATION_MENU)]
        kind, bn = layouts[(i // len(ACTIVATION_MENU)) % len(layouts)]
        net = random_network(rng, act, kind, bn, dtype)
        check_network(net, schedules[i % len(schedules)], rng, tolerance=tolerance, report=report)
    return report
