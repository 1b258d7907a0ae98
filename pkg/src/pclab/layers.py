"""Parameterised blocks of a predictive-coding network.

Every block maps the previous value node to a prediction of the next one,
``mu = BN(pool(linear(f(x_prev))))``: the activation acts on the block's
*input* state and batch normalisation (when present) sits after pooling.
The first block of a network uses the identity, so clamped pixels enter
unchanged.

Blocks are stateless apart from their parameters and batch-norm running
statistics; a forward call returns an explicit cache that the matching
backward call consumes.  ``predict``/``backtransmit`` wrap that pair for
single-cache use.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import erf

from . import ndtensor as nd
from .errors import DimensionError, StateError

ACTIVATIONS = ("identity", "relu", "leaky_relu", "gelu", "hard_tanh")
BN_PHASES = ("inference", "learning", "eval")

_SQRT2 = np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class Activation:
    """Elementwise nonlinearity with its derivative.

    Kinks use the zero subgradient for the relu family (``f'(0) = 0``) and
    for hard-tanh at +/-1.
    """

    kind: str = "relu"
    slope: float = 0.01

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.kind!r}; choose from {ACTIVATIONS}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        k = self.kind
        if k == "identity":
            return x
        if k == "relu":
            return np.maximum(x, 0)
        if k == "leaky_relu":
            return np.where(x > 0, x, x * x.dtype.type(self.slope))
        if k == "gelu":
            return (0.5 * x * (1.0 + erf(x / _SQRT2))).astype(x.dtype, copy=False)
        return np.clip(x, -1, 1)

    def derivative(self, x: np.ndarray) -> np.ndarray:
        k = self.kind
        one = x.dtype.type(1)
        if k == "identity":
            return np.ones_like(x)
        if k == "relu":
            return (x > 0).astype(x.dtype)
        if k == "leaky_relu":
            return np.where(x > 0, one, x.dtype.type(self.slope))
        if k == "gelu":
            cdf = 0.5 * (1.0 + erf(x / _SQRT2))
            pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
            return (cdf + x * pdf).astype(x.dtype, copy=False)
        return ((x > -1) & (x < 1)).astype(x.dtype)


IDENTITY = Activation("identity")


def activation_apply(act: Activation, x):
    return act(x)


def activation_derivative(act: Activation, x):
    return act.derivative(x)


# --------------------------------------------------------------------------
# Batch normalisation


@dataclass
class BNCache:
    xhat: np.ndarray
    std: np.ndarray
    axes: tuple
    batch_stats: bool
    mean: np.ndarray = None
    var: np.ndarray = None


@dataclass
class BatchNormState:
    """Per-channel affine normalisation with running statistics.

    ``frozen`` guards the running statistics: while set, no call (in any
    phase) writes them.  Running averages follow
    ``new = (1 - momentum) * old + momentum * batch`` with the biased
    batch variance.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    frozen: bool = False
    updates: int = 0

    @classmethod
    def create(cls, channels: int, dtype=nd.DEFAULT_DTYPE, momentum=0.1, eps=1e-5):
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )

    @staticmethod
    def _axes(x):
        if x.ndim == 2:
            return (0,)
        if x.ndim == 4:
            return (0, 2, 3)
        raise DimensionError(f"batch norm expects (B, C) or (B, C, H, W), got {x.shape}")

    def _bcast(self, v, ndim):
        return v.reshape((1, -1) + (1,) * (ndim - 2))

    def normalize(self, x: np.ndarray, phase: str = "inference", stats=None):
        """Return ``(y, cache)``.

        ``inference`` normalises with the batch's own statistics and leaves
        running statistics alone; ``learning`` does the same and folds the
        batch statistics into the running averages once; ``eval`` uses the
        running statistics.  ``stats=(mean, var)`` overrides the batch
        statistics (used when inference caches them from the first pass).
        """
        if phase not in BN_PHASES:
            raise ValueError(f"unknown batch-norm phase {phase!r}")
        axes = self._axes(x)
        if x.shape[1] != self.gamma.shape[0]:
            raise DimensionError(f"batch norm has {self.gamma.shape[0]} channels, input {x.shape}")
        if phase == "eval":
            mean, var, batch = self.running_mean, self.running_var, False
        elif stats is not None:
            mean, var = stats
            batch = False
        else:
            mean, var, batch = x.mean(axis=axes), x.var(axis=axes), True
        if phase == "learning":
            if stats is None:
                self.update_running(mean, var)
            else:
                self.update_running(x.mean(axis=axes), x.var(axis=axes))
        nd_ = x.ndim
        std = np.sqrt(var + x.dtype.type(self.eps)).astype(x.dtype, copy=False)
        xhat = (x - self._bcast(mean, nd_)) / self._bcast(std, nd_)
        y = self._bcast(self.gamma, nd_) * xhat + self._bcast(self.beta, nd_)
        return y, BNCache(xhat, std, axes, batch, mean, var)

    def update_running(self, mean, var):
        """Fold one batch's statistics into the running averages (no-op
        while frozen)."""
        if self.frozen:
            return
        m = self.running_mean.dtype.type(self.momentum)
        self.running_mean[...] = (1 - m) * self.running_mean + m * mean
        self.running_var[...] = (1 - m) * self.running_var + m * var
        self.updates += 1

    def backward(self, dy: np.ndarray, cache: BNCache):
        nd_ = dy.ndim
        axes = cache.axes
        dgamma = (dy * cache.xhat).sum(axis=axes)
        dbeta = dy.sum(axis=axes)
        dxhat = dy * self._bcast(self.gamma, nd_)
        inv = 1.0 / self._bcast(cache.std, nd_)
        if not cache.batch_stats:
            return dxhat * inv, dgamma, dbeta
        n = dy.size // dy.shape[1]
        s1 = dxhat.sum(axis=axes, keepdims=True)
        s2 = (dxhat * cache.xhat).sum(axis=axes, keepdims=True)
        dx = inv * (dxhat - s1 / n - cache.xhat * (s2 / n))
        return dx.astype(dy.dtype, copy=False), dgamma, dbeta


def bn_normalize(bn: BatchNormState, x, phase):
    return bn.normalize(x, phase)[0]


# --------------------------------------------------------------------------
# Blocks


@dataclass
class BlockCache:
    x: np.ndarray
    a: np.ndarray
    z_shape: tuple
    pool: Optional[nd.PoolIndices] = None
    bn: Optional[BNCache] = None
    bn_stats: Optional[tuple] = None


class Block:
    """Shared machinery for dense and convolutional blocks."""

    act: Activation
    bn: Optional[BatchNormState]

    def __init__(self):
        self._cache: Optional[BlockCache] = None

    # subclasses implement _linear / _linear_backward / params
    def parameters(self) -> dict:
        p = dict(self.params)
        if self.bn is not None:
            p["bn_gamma"] = self.bn.gamma
            p["bn_beta"] = self.bn.beta
        return p

    def forward(self, x, phase="inference", bn_stats=None):
        """Prediction for the next value node plus the backward cache."""
        if tuple(x.shape[1:]) != tuple(self.in_shape):
            raise DimensionError(f"{type(self).__name__} expects input {self.in_shape}, got {x.shape[1:]}")
        a = self.act(x)
        z = self._linear(a)
        z_shape = z.shape
        pidx = None
        if getattr(self, "pool", False):
            z, pidx = nd.maxpool2d(z, 2, 2)
        bcache = None
        if self.bn is not None:
            z, bcache = self.bn.normalize(z, phase, stats=bn_stats)
        stats = None if bcache is None or phase == "eval" else (bcache.mean, bcache.var)
        return z, BlockCache(x, a, z_shape, pidx, bcache, stats)

    def backward(self, dout, cache: BlockCache, need_input=True):
        """Adjoint of ``forward``: returns ``(d_input, param_grads)`` for the
        scalar ``<dout, forward(x)>``.  Gradients are sums over the batch."""
        grads = {}
        d = dout
        if self.bn is not None:
            d, grads["bn_gamma"], grads["bn_beta"] = self.bn.backward(d, cache.bn)
        if cache.pool is not None:
            d = nd.maxpool2d_grad(d, cache.pool)
        da, lin = self._linear_backward(d, cache, need_input)
        grads.update(lin)
        if not need_input:
            return None, grads
        return da * self.act.derivative(cache.x), grads

    def predict(self, x_prev, phase="inference"):
        mu, self._cache = self.forward(x_prev, phase)
        return mu

    def backtransmit(self, eps_next, x):
        """``J^T eps_next`` for the Jacobian of ``predict`` at ``x``; this
        includes the ``f'(x)`` factor."""
        c = self._cache
        if c is None:
            raise StateError("backtransmit called before a matching predict")
        if c.x is not x and (c.x.shape != x.shape or not np.array_equal(c.x, x)):
            raise StateError("backtransmit input does not match the cached predict call")
        return self.backward(eps_next, c)[0]


class DenseLayer(Block):
    """``mu = W f(x) + b`` (then optional BN); non-flat inputs are flattened."""

    def __init__(self, in_shape, out_features, act=None, bn=None, rng=None,
                 dtype=nd.DEFAULT_DTYPE):
        super().__init__()
        self.in_shape = tuple(np.atleast_1d(in_shape))
        self.in_features = int(np.prod(self.in_shape))
        self.out_shape = (int(out_features),)
        self.act = act if act is not None else Activation("relu")
        rng = rng if rng is not None else nd.make_rng(0)
        self.params = {
            "W": nd.rand_init((out_features, self.in_features), "kaiming-uniform", rng, dtype),
            "b": nd.rand_init((out_features,), "zeros", rng, dtype),
        }
        self.bn = bn

    def _linear(self, a):
        a2 = a.reshape(a.shape[0], -1)
        return nd.matmul(a2, self.params["W"].T) + self.params["b"]

    def _linear_backward(self, d, cache, need_input):
        a2 = cache.a.reshape(cache.a.shape[0], -1)
        grads = {"W": d.T @ a2, "b": d.sum(axis=0)}
        da = (d @ self.params["W"]).reshape(cache.a.shape) if need_input else None
        return da, grads


class ConvBlock(Block):
    """conv (k x k) -> optional 2x2/2 max-pool -> optional BN."""

    def __init__(self, in_shape, out_channels, kernel=3, stride=1, padding=1, pool=True,
                 act=None, bn=None, rng=None, dtype=nd.DEFAULT_DTYPE):
        super().__init__()
        self.in_shape = tuple(in_shape)
        c, h, w = self.in_shape
        self.stride, self.padding, self.pool = stride, padding, pool
        ho = nd.conv_output_size(h, kernel, stride, padding)
        wo = nd.conv_output_size(w, kernel, stride, padding)
        if pool:
            if ho < 2 or wo < 2 or ho % 2 or wo % 2:
                raise DimensionError(f"pooling a {ho}x{wo} map with 2x2/2 windows")
            ho, wo = ho // 2, wo // 2
        self.out_shape = (out_channels, ho, wo)
        self.act = act if act is not None else Activation("relu")
        rng = rng if rng is not None else nd.make_rng(0)
        self.params = {
            "kernel": nd.rand_init((out_channels, c, kernel, kernel), "kaiming-uniform", rng, dtype),
            "bias": nd.rand_init((out_channels,), "zeros", rng, dtype),
        }
        self.bn = bn

    def _linear(self, a):
        z = nd.conv2d(a, self.params["kernel"], self.stride, self.padding)
        return z + self.params["bias"][None, :, None, None]

    def _linear_backward(self, d, cache, need_input):
        k = self.params["kernel"]
        grads = {
            "kernel": nd.conv2d_grad_kernel(d, cache.a, k.shape, self.stride, self.padding),
            "bias": d.sum(axis=(0, 2, 3)),
        }
        da = nd.conv2d_grad_input(d, k, cache.a.shape, self.stride, self.padding) if need_input else None
        return da, grads


def predict(layer: Block, x_prev, phase="inference"):
    return layer.predict(x_prev, phase)


def backtransmit(layer: Block, eps_next, x):
    return layer.backtransmit(eps_next, x)


# --------------------------------------------------------------------------
# Networks


@dataclass
class Network:
    """Ordered blocks; block ``l`` (1-based) predicts value node ``l``."""

    blocks: list
    input_shape: tuple
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.blocks) < 2:
            raise DimensionError("a network needs at least two layers")
        shape = tuple(self.input_shape)
        for i, b in enumerate(self.blocks, 1):
            if tuple(b.in_shape) != shape:
                raise DimensionError(f"layer {i} expects {b.in_shape}, previous gives {shape}")
            shape = b.out_shape
        self.blocks[0].act = IDENTITY

    @property
    def L(self) -> int:
        return len(self.blocks)

    @property
    def output_size(self) -> int:
        return int(np.prod(self.blocks[-1].out_shape))

    @property
    def dtype(self):
        return next(iter(self.blocks[0].params.values())).dtype

    def __getitem__(self, l):
        """1-based access: ``net[l]`` predicts value node ``l``."""
        if not 1 <= l <= self.L:
            raise IndexError(l)
        return self.blocks[l - 1]

    def bn_layers(self):
        return [b.bn for b in self.blocks if b.bn is not None]

    def parameters(self) -> dict:
        out = {}
        for i, b in enumerate(self.blocks, 1):
            for k, v in b.parameters().items():
                out[f"l{i}.{k}"] = v
        return out

    def state_arrays(self) -> dict:
        """Parameters plus batch-norm running statistics, by name."""
        out = self.parameters()
        for i, b in enumerate(self.blocks, 1):
            if b.bn is not None:
                out[f"l{i}.bn_running_mean"] = b.bn.running_mean
                out[f"l{i}.bn_running_var"] = b.bn.running_var
        return out

    def forward(self, o, phase="eval"):
        """Plain feed-forward pass; returns the output predictions."""
        x = o
        for b in self.blocks:
            x, _ = b.forward(x, phase)
        return x

    def checksum(self, include_running=True) -> str:
        import hashlib

        h = hashlib.sha256()
        arrays = self.state_arrays() if include_running else self.parameters()
        for k, v in sorted(arrays.items()):
            h.update(k.encode())
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()


def _bn(use_bn, channels, dtype, momentum):
    return BatchNormState.create(channels, dtype, momentum) if use_bn else None


def build_mlp(depth, in_shape=(1, 28, 28), hidden=128, n_classes=10, act="relu",
              bn=False, seed=0, dtype=nd.DEFAULT_DTYPE, bn_momentum=0.1):
    """``depth`` dense layers (``depth - 1`` hidden value nodes)."""
    rng = nd.make_rng(seed)
    act = act if isinstance(act, Activation) else Activation(act)
    blocks = []
    shape = tuple(in_shape)
    for l in range(1, depth + 1):
        out = n_classes if l == depth else hidden
        norm = _bn(bn and l < depth, out, dtype, bn_momentum)
        blocks.append(DenseLayer(shape, out, act, norm, rng, dtype))
        shape = (out,)
    return Network(blocks, tuple(in_shape), name=f"mlp-{depth}")


# channels, paddings and the blocks followed by a 2x2 pool; linear hidden widths
VGG_PRESETS = {
    "vgg5": dict(channels=[128, 256, 512, 512], paddings=[1, 1, 1, 0], pools=[1, 2, 3, 4], linear=[]),
    "vgg7": dict(channels=[128, 128, 256, 256, 512, 512], paddings=[1, 1, 1, 0, 1, 0],
                 pools=[1, 2, 4], linear=[]),
    "vgg10": dict(channels=[64, 128, 128, 128, 256, 256, 256, 256, 512], paddings=[1] * 9,
                  pools=[1, 3, 5, 7, 9], linear=[]),
    "vgg15": dict(channels=[64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512],
                  paddings=[1] * 13, pools=[2, 4, 7, 10, 13], linear=[512]),
    "vgg5-narrow": dict(channels=[16, 32, 64, 64], paddings=[1, 1, 1, 0], pools=[1, 2, 3, 4], linear=[]),
}


def build_vgg(name, in_shape=(3, 32, 32), n_classes=10, act="relu", bn=True, seed=0,
              dtype=nd.DEFAULT_DTYPE, bn_momentum=0.1):
    spec = VGG_PRESETS[name]
    rng = nd.make_rng(seed)
    act = act if isinstance(act, Activation) else Activation(act)
    blocks = []
    shape = tuple(in_shape)
    for i, (ch, pad) in enumerate(zip(spec["channels"], spec["paddings"]), 1):
        blk = ConvBlock(shape, ch, 3, 1, pad, i in spec["pools"], act,
                        _bn(bn, ch, dtype, bn_momentum), rng, dtype)
        blocks.append(blk)
        shape = blk.out_shape
    for width in spec["linear"]:
        blocks.append(DenseLayer(shape, width, act, _bn(bn, width, dtype, bn_momentum), rng, dtype))
        shape = (width,)
    blocks.append(DenseLayer(shape, n_classes, act, None, rng, dtype))
    return Network(blocks, tuple(in_shape), name=name)


def build_network(arch, in_shape, n_classes=10, act="relu", bn=False, seed=0,
                  dtype=nd.DEFAULT_DTYPE, hidden=128):
    if arch.startswith("mlp-"):
        return build_mlp(int(arch.split("-", 1)[1]), in_shape, hidden, n_classes, act, bn, seed, dtype)
    if arch in VGG_PRESETS:
        return build_vgg(arch, in_shape, n_classes, act, bn, seed, dtype)
    raise KeyError(f"unknown architecture preset {arch!r}")
