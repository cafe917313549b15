"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .collective import (
    CommPrecision,
    CostModel,
    all_reduce,
    fit_cost_model,
    iteration_time,
    rel_l2_error,
    ring_time,
    scaling_efficiency,
)
from .config import OUT_DIR_ENV, Config, ConfigError, apply_overrides, load_config
from .numeric_core import NonFiniteError, Rng, rand_normal
from .trainer import (
    TRAIN_LOG_HEADER,
    TrainingError,
    blend_for,
    make_hyper,
    make_schedule,
    run,
)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

SCHEDULE_HEADER = ("epoch", "lr", "alpha_sgd", "alpha_rmsprop")
ALLREDUCE_HEADER = ("workers", "elements", "precision", "rel_l2_error", "ring_seconds_model")
SUMMARY_HEADER = (
    "epoch", "mean_train_loss", "lr", "alpha_sgd", "comm_seconds_model", "val_loss", "val_accuracy"
)
DEFAULT_PAYLOAD_BYTES = 51_200_000  # ~25.6M parameters sent as binary16


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _writer(out):
    return csv.writer(out, lineterminator="\n")


def _load(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    return apply_overrides(cfg, args.overrides)


def cmd_train(args, out) -> int:
    cfg = _load(args)
    if not cfg.out_dir:
        cfg = replace(cfg, out_dir=os.environ.get(OUT_DIR_ENV) or "runs")
    try:
        result = run(cfg)
    except (NonFiniteError, TrainingError, FloatingPointError) as exc:
        print(f"training failed: {exc} (partial logs in {cfg.out_dir})", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError) as exc:
        # dataset file missing or incompatible with model.layers
        raise ConfigError(str(exc)) from None
    final = result.log.epochs[-1] if result.log.epochs else None
    msg = f"wrote logs and checkpoint to {cfg.out_dir}"
    if final:
        msg += f"; final val_accuracy={final[2]:.4f}"
    print(msg, file=out)
    return EXIT_OK


def cmd_schedule_dump(args, out) -> int:
    if args.step <= 0:
        raise ConfigError("--step must be > 0")
    cfg = _load(args)
    if cfg.epochs == 0:
        raise ConfigError("epochs must be > 0 to dump a schedule")
    ipe = cfg.iterations_per_epoch or None
    sched = make_schedule(cfg, ipe)
    hyper = make_hyper(cfg)
    w = _writer(out)
    w.writerow(SCHEDULE_HEADER)
    k = 0
    while k * args.step < cfg.epochs:
        epoch = k * args.step
        lr = sched(epoch)
        b = blend_for(cfg.optimizer, epoch, lr, hyper)
        w.writerow([_fmt(epoch), _fmt(lr), _fmt(b.alpha_sgd), _fmt(b.alpha_rmsprop)])
        k += 1
    return EXIT_OK


def cmd_simulate_allreduce(args, out) -> int:
    if args.workers < 1 or args.elements < 1:
        raise ConfigError("--workers and --elements must be >= 1")
    precision = CommPrecision.parse(args.precision)
    payloads = [rand_normal(Rng(args.seed, w), args.elements) for w in range(args.workers)]
    exact = all_reduce(payloads, "sum", CommPrecision.FULL64)
    got = all_reduce(payloads, "sum", precision)
    model = CostModel(args.alpha, args.beta, 1.0)
    seconds = ring_time(args.elements * precision.bytes_per_element, args.workers, model)
    w = _writer(out)
    w.writerow(ALLREDUCE_HEADER)
    w.writerow([args.workers, args.elements, precision.label, _fmt(rel_l2_error(got, exact)), _fmt(seconds)])
    return EXIT_OK


def _read_measurements(path):
    workers, seconds = [], []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    w, s = int(row[0]), float(row[1])
                except (ValueError, IndexError):
                    if not workers and row[0].strip() == "workers":
                        continue
                    raise ConfigError(f"{path}: bad row {row!r}") from None
                workers.append(w)
                seconds.append(s)
    except OSError as exc:
        raise ConfigError(f"cannot read measurements {path}: {exc.strerror}") from None
    return workers, seconds


def cmd_fit_costmodel(args, out) -> int:
    workers, seconds = _read_measurements(args.measurements)
    try:
        fit = fit_cost_model(workers, seconds, args.payload_bytes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    m = fit.model
    print(f"alpha_latency={m.alpha_latency!r}", file=out)
    print(f"beta_bandwidth={m.beta_bandwidth!r}", file=out)
    print(f"gamma_compute={m.gamma_compute!r}", file=out)
    if m.gamma_compute > 0:
        for n in (8, 1024):
            print(f"efficiency_{n}={scaling_efficiency(n, m, args.payload_bytes)!r}", file=out)
    w = _writer(out)
    w.writerow(("workers", "seconds", "predicted", "residual"))
    for n, s, r in zip(workers, seconds, fit.residuals):
        w.writerow([n, _fmt(s), _fmt(iteration_time(args.payload_bytes, n, m)), _fmt(r)])
    return EXIT_OK


def cmd_log_summary(args, out) -> int:
    train_path = os.path.join(args.run_dir, "train_log.csv")
    val_path = os.path.join(args.run_dir, "val_log.csv")
    try:
        with open(train_path, newline="", encoding="utf-8") as fh:
            train_rows = list(csv.DictReader(fh))
        with open(val_path, newline="", encoding="utf-8") as fh:
            val_rows = {int(r["epoch"]): r for r in csv.DictReader(fh)}
    except OSError as exc:
        raise ConfigError(f"cannot read run logs in {args.run_dir}: {exc.strerror}") from None
    if train_rows and tuple(train_rows[0]) != TRAIN_LOG_HEADER:
        raise ConfigError(f"{train_path}: unexpected header")
    by_epoch = {}
    for r in train_rows:
        by_epoch.setdefault(int(float(r["epoch"])), []).append(r)
    w = _writer(out)
    w.writerow(SUMMARY_HEADER)
    for epoch in sorted(by_epoch):
        rows = by_epoch[epoch]
        last = rows[-1]
        val = val_rows.get(epoch)
        w.writerow([
            epoch,
            _fmt(np.mean([float(r["train_loss"]) for r in rows])),
            last["lr"],
            last["alpha_sgd"],
            _fmt(sum(float(r["comm_seconds_model"]) for r in rows)),
            val["val_loss"] if val else "",
            val["val_accuracy"] if val else "",
        ])
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="largebatch", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run a training experiment")
    t.add_argument("config")
    t.add_argument("overrides", nargs="*", metavar="key=value")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("schedule-dump", help="print lr and blend coefficients on an epoch grid")
    s.add_argument("--config")
    s.add_argument("--step", type=float, default=1.0)
    s.add_argument("overrides", nargs="*", metavar="key=value")
    s.set_defaults(func=cmd_schedule_dump)

    a = sub.add_parser("simulate-allreduce", help="binary16 all-reduce error and modeled ring time")
    a.add_argument("--workers", type=int, required=True)
    a.add_argument("--elements", type=int, required=True)
    a.add_argument("--precision", choices=("full64", "half16"), default="half16")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--alpha", type=float, default=CostModel.alpha_latency, help="seconds per hop")
    a.add_argument("--beta", type=float, default=CostModel.beta_bandwidth, help="seconds per byte")
    a.set_defaults(func=cmd_simulate_allreduce)

    f = sub.add_parser("fit-costmodel", help="least-squares ring cost model from (workers, seconds)")
    f.add_argument("measurements")
    f.add_argument("--payload-bytes", type=int, default=DEFAULT_PAYLOAD_BYTES)
    f.set_defaults(func=cmd_fit_costmodel)

    g = sub.add_parser("log-summary", help="per-epoch plot-ready CSV from a run directory")
    g.add_argument("run_dir")
    g.set_defaults(func=cmd_log_summary)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
