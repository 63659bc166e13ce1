"""Accuracy, robustness ratios, positive transfer and aggregation over run records."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

SCHEMA_VERSION = 1
CSV_COLUMNS = ("model", "n", "m", "task", "size", "seed", "accuracy")


class MetricError(ValueError):
    pass


@dataclass
class RunRecord:
    task: str
    model: str
    n: int
    m: int
    target_size: int
    seed: int
    accuracy: float
    from_scratch: bool = False
    train_accuracy: float | None = None
    loss_history: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    rule: dict | None = None
    seconds: float = 0.0
    status: str = "ok"
    error: str | None = None
    schema: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.status == "ok" and not 0.0 <= self.accuracy <= 1.0:
            raise MetricError(f"accuracy {self.accuracy} outside [0, 1]")

    @property
    def key(self) -> tuple:
        return (self.task, self.model, self.n, self.m, self.target_size, self.seed)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> RunRecord:
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise MetricError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    if predictions.size == 0:
        raise MetricError("accuracy of an empty set is undefined")
    return float(np.mean(predictions == labels))


def rpr(acc_small: float, acc_large: float) -> float:
    """Relative performance retention, small-data accuracy over large-data accuracy."""
    if acc_large <= 0:
        raise MetricError("RPR undefined when the large-data accuracy is zero")
    return acc_small / acc_large


def accuracy_drop(acc_large: float, acc_small: float) -> float:
    """Signed; positive when the small-data model is worse."""
    return acc_large - acc_small


def positive_transfer(accs_by_m: dict[int, float], n: int) -> bool:
    """True iff some partial retraining (m < n) strictly beats training from scratch."""
    if n not in accs_by_m:
        raise MetricError(f"no from-scratch (m={n}) accuracy to compare against")
    partial = [a for m, a in accs_by_m.items() if m < n]
    if not partial:
        raise MetricError("no partially retrained cell (m < n)")
    return max(partial) > accs_by_m[n]


def cell_means(records) -> dict[tuple, float]:
    """Mean accuracy over seeds for every (task, model, n, m, size) cell, skipping failures."""
    acc = defaultdict(list)
    for r in records:
        if r.status == "ok":
            acc[(r.task, r.model, r.n, r.m, r.target_size)].append(r.accuracy)
    return {k: float(np.mean(v)) for k, v in sorted(acc.items())}


def paired_cells(records, large: int | None = None, small: int | None = None) -> list[dict]:
    """Join large- and small-data means cell by cell into drop and RPR rows."""
    means = cell_means(records)
    sizes = sorted({k[4] for k in means})
    if not sizes:
        return []
    large = max(sizes) if large is None else large
    small = min(sizes) if small is None else small
    rows = []
    for (task, model, n, m, size), a_large in means.items():
        if size != large or (task, model, n, m, small) not in means:
            continue
        a_small = means[(task, model, n, m, small)]
        rows.append(
            {
                "task": task,
                "model": model,
                "n": n,
                "m": m,
                "acc_large": a_large,
                "acc_small": a_small,
                "drop": accuracy_drop(a_large, a_small),
                "rpr": rpr(a_small, a_large) if a_large > 0 else float("nan"),
            }
        )
    return rows


def transfer_flags(records) -> dict[tuple, bool]:
    """Positive-transfer predicate per (task, model, n, size) where it is defined."""
    by_group = defaultdict(dict)
    for (task, model, n, m, size), a in cell_means(records).items():
        by_group[(task, model, n, size)][m] = a
    flags = {}
    for (task, model, n, size), accs in by_group.items():
        if n in accs and any(m < n for m in accs):
            flags[(task, model, n, size)] = positive_transfer(accs, n)
    return flags


def task_flags(records) -> dict[tuple, bool]:
    """Task-level flag: positive transfer for any model on that (task, n, size)."""
    out: dict[tuple, bool] = {}
    for (task, _, n, size), flag in transfer_flags(records).items():
        out[(task, n, size)] = out.get((task, n, size), False) or flag
    return out


def aggregate(records, include_m=None) -> dict:
    """Per-model mean absolute accuracy drop and per-(model, m) mean RPR.

    ``include_m`` optionally restricts which retraining depths enter the
    averages.  The positive-transfer subset keeps only (task, n) pairs whose
    task-level flag is set for both data sizes' large-size group.
    """
    rows = paired_cells(records)
    if include_m is not None:
        allowed = set(include_m)
        rows = [r for r in rows if r["m"] in allowed]
    sizes = sorted({r.target_size for r in records if r.status == "ok"})
    flags = task_flags(records)
    large = max(sizes) if sizes else None

    def positive(r):
        return flags.get((r["task"], r["n"], large), False)

    drop_all = defaultdict(list)
    drop_pos = defaultdict(list)
    rpr_by_m = defaultdict(list)
    for r in rows:
        drop_all[r["model"]].append(abs(r["drop"]))
        if positive(r):
            drop_pos[r["model"]].append(abs(r["drop"]))
        rpr_by_m[(r["model"], r["m"])].append(r["rpr"])
    return {
        "mean_abs_drop": {k: float(np.mean(v)) for k, v in sorted(drop_all.items())},
        "mean_abs_drop_positive": {k: float(np.mean(v)) for k, v in sorted(drop_pos.items())},
        "mean_rpr": {f"{k[0]}|m={k[1]}": float(np.mean(v)) for k, v in sorted(rpr_by_m.items())},
        "cells": rows,
    }


def best_m_table(records) -> list[dict]:
    """Best mean-over-seeds accuracy per (task, model, n, size) and the m achieving it.

    Ties go to the smaller m.
    """
    groups = defaultdict(list)
    for (task, model, n, m, size), a in cell_means(records).items():
        groups[(task, model, n, size)].append((m, a))
    out = []
    for (task, model, n, size), cells in sorted(groups.items()):
        m, a = min(cells, key=lambda c: (-c[1], c[0]))
        out.append({"task": task, "model": model, "n": n, "size": size, "m": m, "accuracy": a})
    return out


def records_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in sorted(records, key=lambda r: r.key):
        if r.status == "ok":
            w.writerow([r.model, r.n, r.m, r.task, r.target_size, r.seed, repr(r.accuracy)])
    return buf.getvalue()


def loss_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("run_id", "epoch", "loss"))
    for r in sorted(records, key=lambda r: r.key):
        run_id = "-".join(str(v) for v in r.key)
        for epoch, loss in enumerate(r.loss_history):
            w.writerow([run_id, epoch, repr(loss)])
    return buf.getvalue()


def rows_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
