"""Command-line surface tying together training, verification, analysis.

Subcommands: train, verify-theorems, verify-locality, diagnose,
bootstrap, predict. Every command returns a process exit status; file
and format problems print a message and exit nonzero.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .audit import run_theorem_audit
from .data import load_dataset
from .diagnostics import compute_record, paired_bootstrap, predict
from .iofmt import (append_metrics_line, format_metrics_line, load_predictions,
                    parse_config, save_predictions)
from .model import load_checkpoint
from .run import train_run
from .trainer import init_run, locality_audit


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ffblocks",
        description="Block-local forward-forward training and verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run Stage-1 training from a config file")
    p.add_argument("config")

    p = sub.add_parser("verify-theorems",
                       help="run the closed-form audit suite")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("verify-locality",
                       help="audit gradient locality on a fresh model and, "
                            "optionally, a checkpoint")
    p.add_argument("config")
    p.add_argument("checkpoint", nargs="?", default=None)

    p = sub.add_parser("diagnose",
                       help="block-health report for a checkpoint on a dataset")
    p.add_argument("checkpoint")
    p.add_argument("config")
    p.add_argument("--record", default=None,
                   help="also append the machine-readable record to this file")

    p = sub.add_parser("bootstrap",
                       help="paired bootstrap on two prediction files")
    p.add_argument("pred_a")
    p.add_argument("pred_b")
    p.add_argument("--resamples", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("predict",
                       help="write test-split predictions for a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("config")
    p.add_argument("out")
    return parser


def _cmd_train(args) -> int:
    config, paths = parse_config(args.config)
    result = train_run(config, metrics_path=paths.metrics,
                       checkpoint_path=paths.checkpoint,
                       log=lambda msg: print(msg))
    final = result.records[-1]
    print(f"done: {config.epochs} epochs, final val_acc={final.val_acc:.4f}, "
          f"metrics -> {paths.metrics}, checkpoint -> {paths.checkpoint}")
    return 0


def _cmd_verify_theorems(args) -> int:
    results = run_theorem_audit(args.seed)
    all_ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name}: {r.detail}")
        all_ok = all_ok and r.passed
    print("theorem audit:", "PASS" if all_ok else "FAIL")
    return 0 if all_ok else 1


def _audit_one(net, batch_x, batch_y, config, tag) -> bool:
    report = locality_audit(net, batch_x, batch_y, config)
    print(f"-- {tag} --")
    print(report.format())
    return report.passed


def _cmd_verify_locality(args) -> int:
    config, _ = parse_config(args.config)
    train, _, _ = load_dataset(config.dataset)
    batch = min(len(train.x), max(2, config.batch_size))
    x, y = train.x[:batch], train.y[:batch]
    from .data import dataset_class_count
    net, _, _, _ = init_run(config, dataset_class_count(config.dataset, train),
                            train.x.shape[1])
    ok = _audit_one(net, x, y, config, "fresh model")
    if args.checkpoint:
        loaded = load_checkpoint(args.checkpoint)
        ok = _audit_one(loaded, x, y, config, f"checkpoint {args.checkpoint}") and ok
    return 0 if ok else 1


def _cmd_diagnose(args) -> int:
    config, _ = parse_config(args.config)
    net = load_checkpoint(args.checkpoint)
    _, _, test = load_dataset(config.dataset)
    record = compute_record(net, test.x, test.y, beta=config.weights.beta,
                            gamma=config.gate.gamma0, epoch=config.epochs,
                            train_acc=float("nan"),
                            label_inject=config.label_inject)
    print(f"test accuracy: {record.val_acc:.4f}")
    header = f"{'block':>5} {'sep_cur_nl':>11} {'sep_nl':>9} {'LC':>9} " \
             f"{'DS':>7} {'g_pos_cur':>10} {'R_mean':>10} {'F':>7} {'own':>7}"
    print(header)
    for d in range(record.depth):
        print(f"{d:>5} {record.sep_cur_nl[d]:>11.4f} {record.sep_nl[d]:>9.4f} "
              f"{record.lc[d]:>9.4f} {record.ds[d]:>7.3f} "
              f"{record.g_pos_cur[d]:>10.4f} {record.r_mean[d]:>10.4f} "
              f"{record.f_idx[d]:>7.4f} {record.own_frac[d]:>7.3f}")
    if args.record:
        append_metrics_line(record, args.record)
        print(f"record appended to {args.record}")
    else:
        print(format_metrics_line(record))
    return 0


def _cmd_bootstrap(args) -> int:
    pred_a = load_predictions(args.pred_a)
    pred_b = load_predictions(args.pred_b)
    report = paired_bootstrap(pred_a, pred_b, resamples=args.resamples,
                              rng=np.random.default_rng(args.seed))
    print(f"accuracy A: {pred_a.accuracy:.4f}  accuracy B: {pred_b.accuracy:.4f}")
    print(f"mean delta acc: {report.mean_delta:+.6f}")
    print(f"95% CI: [{report.ci_low:+.6f}, {report.ci_high:+.6f}] "
          f"({report.resamples} resamples)")
    print(f"disagreement rate: {report.disagreement:.4f}")
    print(f"flips: A-correct/B-wrong {report.flips_a_correct_b_wrong}, "
          f"A-wrong/B-correct {report.flips_a_wrong_b_correct}")
    return 0


def _cmd_predict(args) -> int:
    config, _ = parse_config(args.config)
    net = load_checkpoint(args.checkpoint)
    _, _, test = load_dataset(config.dataset)
    pred = predict(net, test.x, test.y, config.label_inject)
    save_predictions(pred, args.out)
    print(f"wrote {len(pred.true)} predictions to {args.out} "
          f"(accuracy {pred.accuracy:.4f})")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "verify-theorems": _cmd_verify_theorems,
    "verify-locality": _cmd_verify_locality,
    "diagnose": _cmd_diagnose,
    "bootstrap": _cmd_bootstrap,
    "predict": _cmd_predict,
}


def run_command(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
