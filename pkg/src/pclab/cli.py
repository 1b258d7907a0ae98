"""Command-line entry point: ``pclab {train,eval,gradcheck,sweep}``.

Exit status: 0 success, 1 failed check or I/O error, 2 configuration
error, 3 divergence.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint
from .errors import ConfigError, DivergenceError, FormatError
from .experiment import ExperimentConfig, build_trainer, evaluate, load_data, run_experiment
from .training import ALGOS, BN_MODES

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    over = {}
    for key, attr in (("algo", "algo"), ("bn", "bn"), ("seed", "seed"), ("dataset", "dataset"),
                      ("subset", "subset"), ("output_dir", "out"), ("data_dir", "data_dir"),
                      ("epochs", "epochs")):
        v = getattr(args, attr, None)
        if v is not None:
            over[key] = v
    if over.get("dataset") and "data_dir" not in over and not args.config:
        over["data_dir"] = os.path.join("data", over["dataset"])
    try:
        return cfg.with_(**over)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def _add_common(p):
    p.add_argument("--config", metavar="PATH", help="YAML run configuration")
    p.add_argument("--algo", choices=ALGOS)
    p.add_argument("--bn", choices=BN_MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--dataset", choices=("mnist", "cifar10", "digits"))
    p.add_argument("--data-dir", dest="data_dir", metavar="DIR")
    p.add_argument("--subset", type=int, metavar="N", help="use the first N training examples")
    p.add_argument("--epochs", type=int)


def cmd_train(args):
    cfg = _config(args)
    res = run_experiment(cfg)
    for r in res.records:
        print(f"epoch {r.epoch:3d}  train {r.train_top1:.4f}  test {r.test_top1:.4f}  "
              f"({r.seconds:.1f}s)")
    print(f"best_top1 {res.best_top1:.4f}  final_top1 {res.final_top1:.4f}"
          + ("  (early stop)" if res.stopped_early else ""))
    if cfg.output_dir:
        print(f"outputs in {cfg.output_dir}")
    return EXIT_OK


def cmd_eval(args):
    cfg = _config(args)
    ckpt = args.checkpoint or (os.path.join(cfg.output_dir, "model.ckpt") if cfg.output_dir else None)
    if ckpt is None:
        raise ConfigError("eval needs --checkpoint or --out pointing at a training run")
    train, test = load_data(cfg)
    trainer = build_trainer(cfg, train.shape, train.num_classes, 1)
    load_checkpoint(trainer.net, ckpt)
    top1, top5 = evaluate(trainer.net, test)
    print(f"top1 {top1:.4f}  top5 {top5:.4f}  ({len(test)} examples)")
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import gradcheck

    dtype = np.float64 if args.dtype == "float64" else np.float32
    report = gradcheck(args.nets, dtype=dtype, seed=args.seed or 0)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_sweep(args):
    base = _config(args)
    out = base.output_dir or "runs/sweep"
    rows = []
    for depth in args.depths:
        for algo in args.algos:
            for seed in args.seeds:
                name = f"mlp-{depth}_{algo}_s{seed}"
                cfg = base.with_(arch=f"mlp-{depth}", algo=algo, seed=seed,
                                 output_dir=os.path.join(out, name))
                try:
                    res = run_experiment(cfg)
                    row = [depth, algo, seed, res.best_top1, res.final_top1, len(res.records), ""]
                except DivergenceError as e:
                    row = [depth, algo, seed, "", "", "", f"diverged: {e}"]
                print(",".join(map(str, row)), flush=True)
                rows.append(row)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "sweep.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["depth", "algo", "seed", "best_top1", "final_top1", "epochs", "note"])
        w.writerows(rows)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="pclab", description="Deep predictive-coding experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", metavar="PATH")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--nets", type=int, default=20)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="depth x algorithm x seed grid of MLP runs")
    _add_common(p)
    p.add_argument("--depths", type=int, nargs="+", default=[4, 8, 12])
    p.add_argument("--algos", nargs="+", choices=ALGOS, default=["bp", "pc", "pc-sf"])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
