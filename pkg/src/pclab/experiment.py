"""Config-driven training runs, evaluation and metric/energy exports."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np
import yaml

from . import dataio
from .checkpoint import save_checkpoint
from .errors import ConfigError, DivergenceError
from .inference import InferenceConfig
from .layers import ACTIVATIONS, VGG_PRESETS, build_network
from .learning import LearningConfig
from .training import ALGOS, BN_MODES, Trainer, algo_parts, make_schedule, predict_logits, topk_accuracy

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DATASETS = ("mnist", "cifar10", "digits")


@dataclass
class ExperimentConfig:
    """Flat run configuration; the YAML config file mirrors these keys."""

    schema_version: int = SCHEMA_VERSION
    arch: str = "mlp-4"
    hidden: int = 128
    activation: str = "relu"
    dataset: str = "mnist"
    data_dir: str = "data/mnist"
    subset: Optional[int] = None
    subset_per_class: Optional[int] = None
    test_subset: Optional[int] = None
    # evaluate on the last ``holdout`` training examples instead of the test files
    holdout: Optional[int] = None
    normalize: bool = True
    augment: bool = False
    algo: str = "pc"
    bn: str = "off"
    k: float = 1.0
    spike_alpha: Optional[float] = None
    schedule_hidden_only: bool = True
    beta: Optional[float] = None
    center: bool = False
    T: Optional[int] = None
    lr_x: float = 0.1
    momentum_x: float = 0.0
    last_layer_lr_decay: bool = False
    convergence_tol: Optional[float] = None
    cache_bn_stats: bool = False
    lr_w: float = 1e-3
    weight_decay: float = 1e-4
    adam_eps: float = 1e-8
    forward_sigma_t: Optional[int] = None
    train_bn_affine: bool = True
    bp_loss: str = "cross_entropy"
    epochs: int = 25
    schedule_epochs: int = 25
    batch_size: int = 128
    seed: int = 0
    patience: int = 10
    dtype: str = "float32"
    check_phases: bool = False
    output_dir: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.algo not in ALGOS:
            raise ConfigError(f"unknown algo {self.algo!r}")
        if self.bn not in BN_MODES:
            raise ConfigError(f"unknown bn mode {self.bn!r}")
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not (self.arch in VGG_PRESETS or (self.arch.startswith("mlp-")
                                             and self.arch[4:].isdigit() and int(self.arch[4:]) >= 2)):
            raise ConfigError(f"unknown architecture preset {self.arch!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.holdout is not None and self.holdout < 1:
            raise ConfigError("holdout must be positive")
        if self.T is not None and self.T < 1:
            raise ConfigError("T must be at least 1")
        if self.lr_x <= 0 or self.lr_w <= 0 or self.adam_eps <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0 <= self.momentum_x < 1:
            raise ConfigError("momentum_x must lie in [0, 1)")
        if self.algo == "bp" and self.bp_loss not in ("cross_entropy", "squared_error"):
            raise ConfigError(f"unknown bp_loss {self.bp_loss!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            try:
                d = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"{path}: {e}") from None
        if not isinstance(d, dict) or any(isinstance(v, (dict, list)) for v in d.values()):
            raise ConfigError(f"{path}: config must be a flat key-value mapping")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self, path):
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=True)

    def with_(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class MetricsRecord:
    epoch: int
    train_top1: float
    train_top5: float
    test_top1: float
    test_top5: float
    energies: list
    seconds: float = 0.0


@dataclass
class RunResult:
    records: list
    probe_trace: list = field(default_factory=list)
    best_top1: float = float("nan")
    final_top1: float = float("nan")
    stopped_early: bool = False
    net: object = None


def load_data(cfg: ExperimentConfig):
    if cfg.dataset == "digits":
        train = dataio.load_digits_dataset("train", seed=0)
        test = dataio.load_digits_dataset("test", seed=0)
        norm = ((float(train.images.mean()),), (float(train.images.std()),))
    else:
        train = dataio.load_dataset(cfg.dataset, cfg.data_dir, "train")
        if cfg.holdout:
            train, test = dataio.split_holdout(train, cfg.holdout)
        else:
            test = dataio.load_dataset(cfg.dataset, cfg.data_dir, "test")
        norm = dataio.NORMALIZATION[cfg.dataset]
    if cfg.subset_per_class is not None:
        train = dataio.subset(train, per_class=cfg.subset_per_class)
    elif cfg.subset is not None:
        train = dataio.subset(train, n=cfg.subset)
    if cfg.test_subset is not None:
        test = dataio.subset(test, n=cfg.test_subset)
    if cfg.normalize:
        train = dataio.normalize(train, *norm)
        test = dataio.normalize(test, *norm)
    return train, test


def build_trainer(cfg: ExperimentConfig, input_shape, n_classes, steps_per_epoch):
    dtype = np.dtype(cfg.dtype).type
    net = build_network(cfg.arch, input_shape, n_classes, cfg.activation, cfg.bn != "off",
                        cfg.seed, dtype, cfg.hidden)
    kind, rule = algo_parts(cfg.algo)
    total = min(cfg.epochs, cfg.schedule_epochs) * steps_per_epoch
    learn = LearningConfig(cfg.lr_w, cfg.weight_decay, rule or "standard",
                           forward_sigma_t=cfg.forward_sigma_t, train_bn_affine=cfg.train_bn_affine,
                           adam_eps=cfg.adam_eps)
    if kind is None:
        bn_mode = "off" if cfg.bn == "off" else "standard"
        return Trainer(net, "bp", learn=learn, bn_mode=bn_mode, total_steps=total,
                       bp_loss=cfg.bp_loss, seed=cfg.seed)
    icfg = InferenceConfig(cfg.T if cfg.T is not None else net.L, cfg.lr_x, cfg.momentum_x,
                           cfg.last_layer_lr_decay, cfg.convergence_tol, cfg.cache_bn_stats)
    sched = make_schedule(kind, cfg.lr_x, cfg.k, cfg.spike_alpha, cfg.beta, cfg.center,
                          cfg.schedule_hidden_only)
    return Trainer(net, cfg.algo, icfg, learn, sched, cfg.bn, total, seed=cfg.seed,
                   check_phases=cfg.check_phases)


def evaluate(net, ds, batch_size=1024):
    """``(top1, top5)`` of a pure forward pass with BN in eval mode."""
    logits = predict_logits(net, ds.images, batch_size)
    return topk_accuracy(logits, ds.labels, 1), topk_accuracy(logits, ds.labels, 5)


def run_experiment(cfg: ExperimentConfig, data=None) -> RunResult:
    """Train per ``cfg``; ``data=(train, test)`` bypasses loading.

    Writes ``metrics.csv``, ``energy_trace.json``, ``summary.json``,
    ``config.yaml`` and ``model.ckpt`` when ``cfg.output_dir`` is set.
    """
    train, test = data if data is not None else load_data(cfg)
    steps = -(-len(train) // cfg.batch_size)
    trainer = build_trainer(cfg, train.shape, train.num_classes, steps)
    net = trainer.net
    aug = dataio.AugmentConfig() if cfg.augment else None
    aug_rng = np.random.Generator(np.random.PCG64(cfg.seed + 7919))
    probe_x, probe_y = next(dataio.batches(train, cfg.batch_size, shuffle_seed=cfg.seed))
    probe_y = dataio.one_hot(probe_y, train.num_classes, net.dtype)

    result = RunResult([], net=net)
    best, since_best = -1.0, 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        e_sum = np.zeros(net.L)
        hits1 = hits5 = seen = 0
        for b, (x, y) in enumerate(dataio.batches(train, cfg.batch_size, cfg.seed * 100003 + epoch,
                                                   aug, aug_rng)):
            yh = dataio.one_hot(y, train.num_classes, net.dtype)
            try:
                res = trainer.train_batch(x, yh)
            except DivergenceError as e:
                e.batch = b
                raise DivergenceError(f"epoch {epoch}, batch {b}: {e}", e.layer, b) from e
            e_sum += res.energies
            hits1 += topk_accuracy(res.logits0, y, 1) * len(y)
            hits5 += topk_accuracy(res.logits0, y, 5) * len(y)
            seen += len(y)
        test1, test5 = evaluate(net, test)
        rec = MetricsRecord(epoch, hits1 / seen, hits5 / seen, test1, test5,
                            (e_sum / steps).tolist(), time.perf_counter() - t0)
        result.records.append(rec)
        result.probe_trace.append({"epoch": epoch, "energies": trainer.probe(probe_x, probe_y)})
        log.info("epoch %d train %.4f test %.4f (%.1fs)", epoch, rec.train_top1, test1, rec.seconds)
        if test1 > best:
            best, since_best = test1, 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                result.stopped_early = True
                break
    result.best_top1 = max(r.test_top1 for r in result.records)
    result.final_top1 = result.records[-1].test_top1
    if cfg.output_dir:
        write_outputs(cfg, result)
    return result


def write_outputs(cfg, result: RunResult):
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    export_metrics_csv(result.records, os.path.join(out, "metrics.csv"))
    export_energy_trace(result.probe_trace, os.path.join(out, "energy_trace.json"),
                        {"algo": cfg.algo, "arch": cfg.arch, "seed": cfg.seed})
    cfg.dump(os.path.join(out, "config.yaml"))
    summary = {
        "best_top1": result.best_top1,
        "final_top1": result.final_top1,
        "epochs_run": len(result.records),
        "stopped_early": result.stopped_early,
        "train_top1": [r.train_top1 for r in result.records],
    }
    with open(os.path.join(out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    save_checkpoint(result.net, os.path.join(out, "model.ckpt"), {"arch": cfg.arch})


def metrics_header(n_layers):
    return ["epoch", "split", "top1", "top5"] + [f"E_layer_{l}" for l in range(1, n_layers + 1)] + ["seconds"]


def export_metrics_csv(records, path, split="test"):
    """One row per epoch: ``epoch,split,top1,top5,E_layer_1..E_layer_L,seconds``.

    Floats are written with ``repr`` so they parse back exactly.
    """
    if not records:
        raise ValueError("no records to export")
    L = len(records[0].energies)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(metrics_header(L))
        for r in records:
            top1, top5 = (r.test_top1, r.test_top5) if split == "test" else (r.train_top1, r.train_top5)
            w.writerow([r.epoch, split, repr(top1), repr(top5)] + [repr(float(e)) for e in r.energies]
                       + [repr(r.seconds)])


def read_metrics_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def export_energy_trace(probe_trace, path, meta=None):
    """JSON: ``{"meta": ..., "epochs": [{"epoch", "energies": [[E_layer...] per step]}]}``."""
    if not probe_trace:
        raise ValueError("no trace to export")
    with open(path, "w") as f:
        json.dump({"meta": meta or {}, "epochs": probe_trace}, f)


def energy_share(energies) -> np.ndarray:
    e = np.asarray(energies, dtype=np.float64)
    return e / e.sum()
