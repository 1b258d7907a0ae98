"""Exact reverse-mode reference over the same blocks.

The forward pass reuses ``Block.forward`` so its logits are bitwise equal
to the predictive-coding initialisation on the same inputs and phase.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

LOSSES = ("cross_entropy", "squared_error")


@dataclass
class BpTape:
    caches: list
    logits: np.ndarray
    loss: str = "cross_entropy"


def bp_forward(net, o, phase="learning", loss="cross_entropy"):
    if loss not in LOSSES:
        raise ValueError(f"loss must be one of {LOSSES}")
    x = np.asarray(o, dtype=net.dtype)
    caches = []
    for b in net.blocks:
        x, c = b.forward(x, phase)
        caches.append(c)
    return x, BpTape(caches, x, loss)


def loss_value(logits, y, loss="cross_entropy") -> float:
    z = logits.astype(np.float64)
    y = np.asarray(y, dtype=np.float64)
    if loss == "cross_entropy":
        return float(-(y * log_softmax(z, axis=1)).sum(axis=1).mean())
    return float(0.5 * ((z - y) ** 2).sum(axis=1).mean())


def output_delta(logits, y, loss="cross_entropy"):
    """Per-sample ``d loss_b / d logits_b``."""
    y = np.asarray(y, dtype=logits.dtype)
    if loss == "cross_entropy":
        return softmax(logits, axis=1).astype(logits.dtype) - y
    return logits - y


def bp_backward(net, tape: BpTape, y):
    """Gradients of the batch-mean loss and the per-layer squared errors.

    Returns ``(grads, sq_errors, loss)`` where ``grads[l]`` is a dict for
    layer ``l`` (index 0 unused) and ``sq_errors[l-1] = 1/2 mean_b
    ||delta^l_b||^2`` with ``delta^l`` the backpropagated per-sample error
    at value node ``l``.
    """
    L = net.L
    B = tape.logits.shape[0]
    delta = output_delta(tape.logits, y, tape.loss)
    grads = [None] * (L + 1)
    sq = np.zeros(L)
    for l in range(L, 0, -1):
        d = delta.reshape(B, -1).astype(np.float64)
        sq[l - 1] = 0.5 * float((d * d).sum()) / B
        dx, g = net[l].backward(delta, tape.caches[l - 1], need_input=l > 1)
        grads[l] = {k: v / v.dtype.type(B) for k, v in g.items()}
        delta = dx
    return grads, sq, loss_value(tape.logits, y, tape.loss)
