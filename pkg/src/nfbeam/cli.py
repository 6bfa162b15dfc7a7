"""Single entry point: dataset generation, training, evaluation, sweeps,
and the fast self-check.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures. Every
artifact-producing command writes a `<artifact>.manifest.json` beside its
output; rerunning with identical manifest inputs reproduces the artifact
byte for byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time

import numpy as np

from .config import RunConfig, build_run_config
from .dataset import generate_samples, load_arrays, write_dataset
from .errors import NfbeamError
from .evaluation import (
    DEFAULT_NOISE_GRID_DBM,
    DEFAULT_SPEED_GRID_KMH,
    emit_report,
    evaluate_dataset,
    sweep,
)
from .manifest import write_manifest
from .nn import load_checkpoint, save_checkpoint
from .selfcheck import run_selfcheck
from .training import finetune, pretrain, write_training_log

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "NFBEAM_CONFIG"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _add_config_flags(p):
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--preset", default="desk", help="named preset (desk, paper)")


def _resolve_config(args, train_overrides=None, system_overrides=None) -> RunConfig:
    config_path = args.config or os.environ.get(CONFIG_ENV_VAR) or None
    overrides = {}
    if train_overrides:
        overrides["train"] = {k: v for k, v in train_overrides.items() if v is not None}
    if system_overrides:
        overrides["system"] = {k: v for k, v in system_overrides.items() if v is not None}
    return build_run_config(args.preset, config_path, overrides)


def _cmd_gen_dataset(args) -> int:
    started = time.time()
    run_cfg = _resolve_config(
        args,
        system_overrides={"noise_power_dbm": args.noise_dbm, "rng_seed": args.seed},
    )
    cfg = run_cfg.system
    samples = generate_samples(cfg, args.count, args.seed, jobs=args.jobs)
    write_dataset(args.out, cfg, samples, args.seed)
    write_manifest(args.out, "gen-dataset", run_cfg, args.seed, [args.out], started, sys.argv[1:])
    logger.info("wrote %d samples to %s", len(samples), args.out)
    return 0


def _load_for_training(args):
    header, tensors, labels, metas = load_arrays(args.data)
    run_cfg = _resolve_config(
        args,
        train_overrides={
            "mask_alpha": args.alpha,
            "freeze_stage": args.freeze_stage,
            "masked_only_loss": args.masked_only_loss or None,
            "batch_size": args.batch_size,
            "rng_seed": args.seed,
        },
    )
    # The dataset header owns the system config the samples were built with.
    run_cfg = dataclasses.replace(run_cfg, system=header.system)
    return header, tensors, labels, metas, run_cfg


def _cmd_pretrain(args) -> int:
    started = time.time()
    _, tensors, labels, _, run_cfg = _load_for_training(args)
    train = run_cfg.train
    if args.epochs is not None:
        train = dataclasses.replace(train, pretrain_epochs=args.epochs)
    if args.lr is not None:
        train = dataclasses.replace(train, lr_pretrain=args.lr)
    run_cfg = dataclasses.replace(run_cfg, train=train)
    result = pretrain(tensors, labels, run_cfg)
    save_checkpoint(args.out, result.model, step_count=len(result.history))
    log_path = args.out + ".log.csv"
    write_training_log(log_path, result.history)
    write_manifest(args.out, "pretrain", run_cfg, train.rng_seed,
                   [args.out, log_path], started, sys.argv[1:])
    last_val = [r for r in result.history if r["split"] == "val"][-1]
    logger.info("pretrain done: val loss %.4f", last_val["loss"])
    return 0


def _cmd_finetune(args) -> int:
    started = time.time()
    _, tensors, labels, _, run_cfg = _load_for_training(args)
    train = run_cfg.train
    if args.epochs is not None:
        train = dataclasses.replace(train, finetune_epochs=args.epochs)
    if args.lr is not None:
        train = dataclasses.replace(train, lr_finetune=args.lr)
    run_cfg = dataclasses.replace(run_cfg, train=train)
    model = None
    if not args.direct:
        if args.init is None:
            raise UsageError("finetune: error: --init checkpoint required unless --direct")
        model, _ = load_checkpoint(args.init)
    result = finetune(tensors, labels, run_cfg, model, direct=args.direct)
    save_checkpoint(args.out, result.model, step_count=len(result.history))
    log_path = args.out + ".log.csv"
    write_training_log(log_path, result.history)
    write_manifest(args.out, "finetune", run_cfg, train.rng_seed,
                   [args.out, log_path], started, sys.argv[1:])
    last_val = [r for r in result.history if r["split"] == "val"][-1]
    logger.info("finetune done: val accuracy %.4f", last_val["accuracy"])
    return 0


def _cmd_evaluate(args) -> int:
    started = time.time()
    model, _ = load_checkpoint(args.ckpt)
    header, tensors, labels, metas, = load_arrays(args.data)
    record = evaluate_dataset(
        model, tensors, labels, metas, header.system,
        split=args.split, compute_nbg=not args.no_nbg,
    )
    emit_report([record], args.out)
    run_cfg = RunConfig(system=header.system, model=model.mcfg)
    write_manifest(args.out, "evaluate", run_cfg, header.master_seed,
                   [args.out], started, sys.argv[1:])
    print(
        f"accuracy={record.accuracy:.4f} top2={record.top2_accuracy:.4f} "
        f"nbg={record.mean_nbg:.4f} n={record.sample_count}"
    )
    return 0


_AXIS_ALIASES = {
    "noise": "noise_dbm", "noise_dbm": "noise_dbm",
    "speed": "speed_kmh", "speed_kmh": "speed_kmh",
    "rician": "rician_k_db", "rician_k_db": "rician_k_db",
    "alpha": "mask_alpha", "mask_alpha": "mask_alpha",
}


def _cmd_sweep(args) -> int:
    started = time.time()
    axis = _AXIS_ALIASES.get(args.axis)
    if axis is None:
        raise UsageError(f"sweep: error: unknown axis {args.axis!r}")
    if args.values:
        values = [float(v) for v in args.values.split(",")]
    elif axis == "noise_dbm":
        values = list(DEFAULT_NOISE_GRID_DBM)
    elif axis == "speed_kmh":
        values = list(DEFAULT_SPEED_GRID_KMH)
    else:
        raise UsageError(f"sweep: error: --values required for axis {axis}")
    run_cfg = _resolve_config(args)
    model = None
    if axis != "mask_alpha":
        if args.ckpt is None:
            raise UsageError("sweep: error: --ckpt required for this axis")
        model, _ = load_checkpoint(args.ckpt)
        run_cfg = dataclasses.replace(run_cfg, system=model.scfg, model=model.mcfg)
    records = sweep(
        axis, values, run_cfg, model=model,
        master_seed=args.seed, count=args.count, jobs=args.jobs,
    )
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "report.csv")
    written = emit_report(records, csv_path)
    write_manifest(csv_path, "sweep", run_cfg, args.seed, written, started, sys.argv[1:])
    print(f"wrote {len(records)} records to {csv_path}")
    return 0


def _cmd_selfcheck(args) -> int:
    ok, rows = run_selfcheck()
    width = max(len(name) for name, _, _ in rows)
    for name, passed, detail in rows:
        print(f"{'PASS' if passed else 'FAIL'}  {name:<{width}}  {detail}")
    print(f"{'all checks passed' if ok else 'SELF-CHECK FAILED'}")
    return 0 if ok else 2


def build_parser() -> _Parser:
    parser = _Parser(prog="nfbeam", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="generate a labeled pilot dataset")
    _add_config_flags(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--noise-dbm", type=float, default=None)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=_cmd_gen_dataset)

    for name in ("pretrain", "finetune"):
        p = sub.add_parser(name, help=f"{name} the predictor")
        _add_config_flags(p)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--freeze-stage", default=None,
                       choices=("pretrain", "finetune", "none"))
        p.add_argument("--masked-only-loss", action="store_true")
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        if name == "finetune":
            p.add_argument("--init", default=None, help="pretrained checkpoint")
            p.add_argument("--direct", action="store_true",
                           help="train from scratch, nothing frozen")
            p.set_defaults(func=_cmd_finetune)
        else:
            p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("evaluate", help="compute metrics for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--split", default="test", choices=("test", "all"))
    p.add_argument("--no-nbg", action="store_true")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="evaluate along a parameter axis")
    _add_config_flags(p)
    p.add_argument("--axis", required=True)
    p.add_argument("--values", default=None, help="comma-separated values")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("selfcheck", help="run the fast invariant suite")
    p.set_defaults(func=_cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (NfbeamError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
