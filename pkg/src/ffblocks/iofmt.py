"""File formats: run config, metrics lines, prediction sets.

The config is flat ``key = value`` text with one section per concern; the
metrics sink holds one machine-parseable line per epoch with a fixed
field order; prediction files carry one line per example. Floats are
serialized with ``repr`` so every round trip is exact.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields, replace

import numpy as np

from .data import DatasetSpec
from .diagnostics import DiagnosticsRecord, PredictionSet
from .goodness import GateConfig
from .losses import LossWeights
from .trainer import TrainConfig


@dataclass(frozen=True)
class RunPaths:
    metrics: str = "metrics.txt"
    checkpoint: str = "model.ckpt"


def _encode(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _decode(text: str, kind):
    if kind is bool:
        if text not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return text == "true"
    return kind(text)


def _section_from(obj) -> dict:
    return {f.name: _encode(getattr(obj, f.name)) for f in fields(obj)}


def _build(cls, section, skip=()):
    kwargs = {}
    for f in fields(cls):
        if f.name in skip or f.name not in section:
            continue
        kind = {"int": int, "float": float, "str": str, "bool": bool}.get(
            f.type if isinstance(f.type, str) else f.type.__name__)
        if kind is None:
            continue
        kwargs[f.name] = _decode(section[f.name], kind)
    return cls(**kwargs)


_NESTED = ("weights", "gate", "dataset")


def serialize_config(config: TrainConfig, paths: RunPaths | None = None) -> str:
    parser = configparser.ConfigParser()
    parser["train"] = {f.name: _encode(getattr(config, f.name))
                       for f in fields(TrainConfig) if f.name not in _NESTED}
    parser["loss"] = _section_from(config.weights)
    parser["gate"] = _section_from(config.gate)
    parser["dataset"] = _section_from(config.dataset)
    if paths is not None:
        parser["io"] = _section_from(paths)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def parse_config_text(text: str):
    """(TrainConfig, RunPaths) from config text; unknown keys rejected."""
    parser = configparser.ConfigParser()
    parser.read_string(text)
    known = {
        "train": {f.name for f in fields(TrainConfig)} - set(_NESTED),
        "loss": {f.name for f in fields(LossWeights)},
        "gate": {f.name for f in fields(GateConfig)},
        "dataset": {f.name for f in fields(DatasetSpec)},
        "io": {f.name for f in fields(RunPaths)},
    }
    for section in parser.sections():
        if section not in known:
            raise ValueError(f"unknown config section [{section}]")
        extra = set(parser[section]) - known[section]
        if extra:
            raise ValueError(f"unknown keys in [{section}]: {sorted(extra)}")

    weights = _build(LossWeights, parser["loss"] if parser.has_section("loss") else {})
    gate = _build(GateConfig, parser["gate"] if parser.has_section("gate") else {})
    dataset = _build(DatasetSpec, parser["dataset"] if parser.has_section("dataset") else {})
    config = _build(TrainConfig, parser["train"] if parser.has_section("train") else {},
                    skip=_NESTED)
    config = replace(config, weights=weights, gate=gate, dataset=dataset)
    paths = _build(RunPaths, parser["io"] if parser.has_section("io") else {})
    return config, paths


def parse_config(path: str):
    with open(path, "r", encoding="ascii") as fh:
        return parse_config_text(fh.read())


def write_config(config: TrainConfig, path: str, paths: RunPaths | None = None):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(serialize_config(config, paths))


_PER_BLOCK_FIELDS = ("sep_cur_nl", "sep_nl", "lc", "ds", "g_pos_cur",
                     "r_mean", "f_idx", "own_frac")


def format_metrics_line(record: DiagnosticsRecord) -> str:
    parts = [f"epoch={record.epoch}",
             f"train_acc={record.train_acc!r}",
             f"val_acc={record.val_acc!r}"]
    for name in _PER_BLOCK_FIELDS:
        values = getattr(record, name)
        parts.extend(f"{name}_{d}={float(v)!r}" for d, v in enumerate(values))
    return " ".join(parts)


def parse_metrics_line(line: str) -> DiagnosticsRecord:
    items = {}
    for token in line.split():
        key, _, value = token.partition("=")
        if not value:
            raise ValueError(f"malformed metrics token {token!r}")
        items[key] = value
    per_block = {}
    for name in _PER_BLOCK_FIELDS:
        values = []
        d = 0
        while f"{name}_{d}" in items:
            values.append(float(items[f"{name}_{d}"]))
            d += 1
        per_block[name] = np.array(values)
    return DiagnosticsRecord(
        epoch=int(items["epoch"]),
        train_acc=float(items["train_acc"]),
        val_acc=float(items["val_acc"]),
        **per_block,
    )


def append_metrics_line(record: DiagnosticsRecord, path: str) -> None:
    """One line per epoch, append-only: a killed run leaves a parseable prefix."""
    with open(path, "a", encoding="ascii") as fh:
        fh.write(format_metrics_line(record) + "\n")


def read_metrics(path: str) -> list:
    records = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(parse_metrics_line(line))
    return records


def save_predictions(pred: PredictionSet, path: str) -> None:
    """One line per example: C scores, predicted label, true label."""
    with open(path, "w", encoding="ascii") as fh:
        for scores, p, t in zip(pred.scores, pred.pred, pred.true):
            fh.write(" ".join(repr(float(s)) for s in scores)
                     + f" {int(p)} {int(t)}\n")


def load_predictions(path: str) -> PredictionSet:
    scores, preds, trues = [], [], []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 3:
                raise ValueError(f"malformed prediction line: {line!r}")
            scores.append([float(s) for s in parts[:-2]])
            preds.append(int(parts[-2]))
            trues.append(int(parts[-1]))
    loaded = PredictionSet.from_scores(np.array(scores), np.array(trues))
    if not np.array_equal(loaded.pred, np.array(preds)):
        raise ValueError(f"{path}: stored predictions are not the score argmax")
    return loaded
