"""Epoch loop: data, training, per-epoch diagnostics, metrics, checkpoint."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import dataset_class_count, load_dataset
from .diagnostics import DiagnosticsRecord, compute_record, predict
from .goodness import AttenuationStats, attenuation_ratio
from .iofmt import append_metrics_line
from .model import Network, save_checkpoint
from .trainer import TrainConfig, init_run, locality_audit, train_step


@dataclass
class RunResult:
    net: Network
    teacher: object
    records: list
    train: object
    val: object
    test: object
    config: TrainConfig


class _AttenuationPool:
    """Pools per-example attenuation ratios over an epoch, per block."""

    def __init__(self, depth: int):
        self.sum_r = np.zeros(depth)
        self.sum_clipped = np.zeros(depth)
        self.min_r = np.full(depth, np.inf)
        self.max_r = np.full(depth, -np.inf)
        self.nonneg = np.zeros(depth)
        self.count = np.zeros(depth)

    def add(self, trace, beta: float):
        for d in range(trace.depth):
            gamma = float(trace.gamma_eff[d])
            for stream in ("nl", "ni"):
                m, p = trace.block(d, stream)
                r = attenuation_ratio(m, p, gamma, beta)
                self.sum_r[d] += r.sum()
                self.sum_clipped[d] += np.minimum(1.0, r).sum()
                self.min_r[d] = min(self.min_r[d], r.min())
                self.max_r[d] = max(self.max_r[d], r.max())
                self.nonneg[d] += np.sum(p >= 0.0)
                self.count[d] += r.size

    def stats(self) -> list:
        out = []
        for d in range(len(self.count)):
            n = max(self.count[d], 1.0)
            out.append(AttenuationStats(
                mean_ratio=float(self.sum_r[d] / n),
                min_ratio=float(self.min_r[d]),
                max_ratio=float(self.max_r[d]),
                free_riding=float(1.0 - self.sum_clipped[d] / n),
                frac_prev_nonneg=float(self.nonneg[d] / n),
            ))
        return out


def train_run(config: TrainConfig, metrics_path: str | None = None,
              checkpoint_path: str | None = None, log=None) -> RunResult:
    """Full Stage-1 run on the configured dataset.

    Writes one metrics line per epoch when ``metrics_path`` is given and
    the final checkpoint when ``checkpoint_path`` is given. Deterministic
    under the config seed: identical configs produce byte-identical
    metrics files on one platform.
    """
    train, val, test = load_dataset(config.dataset)
    class_count = dataset_class_count(config.dataset, train)
    input_dim = train.x.shape[1]
    net, teacher, opt_states, rng = init_run(config, class_count, input_dim)

    records = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(train.x))
        pool = _AttenuationPool(net.depth)
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2:
                continue  # wrong-image pairing needs >= 2 examples
            _, trace = train_step(net, teacher, opt_states, train.x[idx],
                                  train.y[idx], config, epoch, rng)
            pool.add(trace, config.weights.beta)
            step += 1
            if config.locality_audit_every and step % config.locality_audit_every == 0:
                report = locality_audit(net, train.x[idx], train.y[idx], config)
                if not report.passed:
                    raise RuntimeError("locality audit failed during training:\n"
                                       + report.format())

        eval_net = teacher.network if config.eval_with_teacher else net
        train_acc = predict(eval_net, train.x, train.y, config.label_inject).accuracy
        record = compute_record(
            eval_net, val.x, val.y, beta=config.weights.beta,
            gamma=config.gate.gamma0, epoch=epoch, train_acc=train_acc,
            trace_stats=pool.stats(), label_inject=config.label_inject)
        records.append(record)
        if metrics_path:
            append_metrics_line(record, metrics_path)
        if log:
            log(f"epoch {epoch}: train_acc={train_acc:.4f} "
                f"val_acc={record.val_acc:.4f}")

    if checkpoint_path:
        save_checkpoint(net, checkpoint_path)
    return RunResult(net=net, teacher=teacher, records=records, train=train,
                     val=val, test=test, config=config)


def final_test_record(result: RunResult) -> DiagnosticsRecord:
    """Post-training diagnostics on the held-out test split."""
    config = result.config
    eval_net = result.teacher.network if config.eval_with_teacher else result.net
    train_acc = predict(eval_net, result.train.x, result.train.y,
                        config.label_inject).accuracy
    return compute_record(eval_net, result.test.x, result.test.y,
                          beta=config.weights.beta, gamma=config.gate.gamma0,
                          epoch=config.epochs, train_acc=train_acc,
                          label_inject=config.label_inject)
