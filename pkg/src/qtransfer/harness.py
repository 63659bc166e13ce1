"""Transfer tasks, source pretraining, single transfer cells, sweeps and reports."""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import math
import os
import time
import zipfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ansatz, baseline, dataio, metrics, readout, train
from .metrics import RunRecord

log = logging.getLogger(__name__)

QCNN_MODELS = ("qcnn-n", "qcnn-z", "qcnn-g")
CCNN_MODELS = ("ccnn-a", "ccnn-b")
MODELS = QCNN_MODELS + CCNN_MODELS
SMALL_PER_CLASS = 20
CACHE_ENV = "QTRANSFER_CACHE"


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    id: str
    source_dataset: str
    source_classes: tuple[int, ...]
    target_dataset: str
    target_classes: tuple[int, ...]

    @property
    def multiclass(self) -> bool:
        return len(self.source_classes) > 2


TASKS = {
    t.id: t
    for t in (
        TaskSpec("tl1", "mnist", (1, 2), "mnist", (5, 7)),
        TaskSpec("tl2", "mnist", (5, 7), "mnist", (1, 2)),
        TaskSpec("tl3", "mnist", (1, 2), "mnist", (0, 8)),
        TaskSpec("tl4", "mnist", (5, 7), "mnist", (0, 8)),
        TaskSpec("tl5", "fashion", (0, 1), "mnist", (0, 8)),
        TaskSpec("tl6", "mnist", (1, 2, 3, 4, 5, 6, 7, 9), "mnist", (0, 8)),
        TaskSpec("tl7", "fashion", tuple(range(10)), "mnist", (0, 8)),
    )
}


@dataclass(frozen=True)
class SweepConfig:
    tasks: tuple[str, ...] = ()
    models: tuple[str, ...] = ()
    ns: tuple[int, ...] = (3,)
    # None sweeps every depth 0..n
    ms: tuple[int, ...] | None = None
    sizes: tuple[int, ...] = (12000, 40)
    seeds: tuple[int, ...] = (0, 1, 2)
    source_size: int = 12000
    test_size: int = 400
    data_seed: int = 0
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        for t in self.tasks:
            if t not in TASKS:
                raise ValueError(f"unknown task {t!r}")
        for m in self.models:
            if m not in MODELS:
                raise ValueError(f"unknown model {m!r}")
        for n in self.ns:
            if n not in (3, 4):
                raise ValueError(f"n must be 3 or 4, got {n}")
        if self.ms is not None and any(m < 0 for m in self.ms):
            raise ValueError("m must be non-negative")
        unknown = set(self.train) - set(train.TrainConfig.__dataclass_fields__) - {"seed"}
        if unknown:
            raise ValueError(f"unknown training options {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> SweepConfig:
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown sweep options {sorted(extra)}")
        d = dict(d)
        for k in ("tasks", "models", "ns", "sizes", "seeds"):
            if k in d:
                d[k] = tuple(d[k])
        if d.get("ms") is not None:
            d["ms"] = tuple(d["ms"])
        return cls(**d)

    def train_config(self, seed: int) -> train.TrainConfig:
        return train.TrainConfig(**{**self.train, "seed": seed})

    def depths(self, n: int) -> list[int]:
        return list(range(n + 1)) if self.ms is None else [m for m in self.ms if m <= n]

    def cells(self) -> list[tuple]:
        return [
            (task, model, n, m, size, seed)
            for task in self.tasks
            for model in self.models
            for n in self.ns
            for m in self.depths(n)
            for size in self.sizes
            for seed in self.seeds
        ]


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True, eq=False)
class TaskData:
    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray  # the whole filtered target training pool
    target_y: np.ndarray
    target_hash: tuple[str, ...]
    test_x: np.ndarray
    test_y: np.ndarray
    test_hash: tuple[str, ...]


@functools.lru_cache(maxsize=8)
def _split(dataset: str, split: str, root: str) -> dataio.RawDataset:
    return dataio.load_split(dataset, split, root)


def _sample(n_avail: int, k: int, rng, what: str, cap: bool = False) -> np.ndarray:
    """``k`` sorted indices without replacement.  With ``cap`` a request beyond
    ``n_avail`` takes everything (MNIST has only 11686 fives and sevens)."""
    if k > n_avail:
        if not cap:
            raise DatasetError(f"{what}: asked for {k} samples, only {n_avail} available")
        log.warning("%s: asked for %d samples, using all %d available", what, k, n_avail)
        k = n_avail
    return np.sort(rng.choice(n_avail, k, replace=False))


@functools.lru_cache(maxsize=16)
def task_data(task_id: str, n: int, source_size: int, test_size: int, data_seed: int, root: str) -> TaskData:
    """Reduced features for one task at ``2**n`` dimensions.

    The reducer is fit on the sampled source training set and reused for the
    target pool and the test set.  Test images come from the held-out split and
    any training image byte-identical to a test image is dropped from the pool.
    """
    task = TASKS[task_id]
    rng = np.random.default_rng(data_seed)
    src = dataio.select_classes(_split(task.source_dataset, "train", root), task.source_classes)
    src = src.subset(_sample(len(src), source_size, rng, f"{task_id} source", cap=True))
    tgt = dataio.select_classes(_split(task.target_dataset, "train", root), task.target_classes)
    tst = dataio.select_classes(_split(task.target_dataset, "t10k", root), task.target_classes)
    tst = tst.subset(_sample(len(tst), test_size, rng, f"{task_id} test"))
    test_hash = tuple(dataio.image_hashes(tst.images))
    pool_hash = dataio.image_hashes(tgt.images)
    seen = set(test_hash)
    keep = np.array([h not in seen for h in pool_hash], dtype=bool)
    tgt = tgt.subset(np.flatnonzero(keep))
    reducer = dataio.fit_reducer(src, 1 << n)
    return TaskData(
        dataio.reduce(reducer, src),
        src.labels,
        dataio.reduce(reducer, tgt),
        tgt.labels,
        tuple(h for h, k in zip(pool_hash, keep) if k),
        dataio.reduce(reducer, tst),
        tst.labels,
        test_hash,
    )


def target_indices(data: TaskData, size: int, seed: int, data_seed: int, small_threshold: int = 40) -> np.ndarray:
    """Training rows for one cell: small sets are class balanced and drawn by the run
    seed, large sets by the data seed and capped at the pool size."""
    y = data.target_y
    if size <= small_threshold:
        if size % 2:
            raise DatasetError("small target sets must have an even size")
        rng = np.random.default_rng([seed, 1])
        parts = []
        for c in (0, 1):
            pool = np.flatnonzero(y == c)
            parts.append(pool[_sample(len(pool), size // 2, rng, f"class {c} small set")])
        return np.sort(np.concatenate(parts))
    rng = np.random.default_rng([data_seed, 2])
    return _sample(len(y), size, rng, "large target set", cap=True)


# ---------------------------------------------------------------------------
# models


def n_classes(task: TaskSpec) -> int:
    return len(task.source_classes)


def _code_width(k: int) -> int:
    return max(1, math.ceil(math.log2(k)))


def make_model(model: str, n: int, k_source: int = 2):
    if model in QCNN_MODELS:
        return ansatz.build_model(model, n)
    return baseline.build_ccnn(model, n, out_width=_code_width(k_source))


def model_init(spec, model: str, seed: int) -> np.ndarray:
    if model in QCNN_MODELS:
        return train.init_params(spec.n_params, seed)
    return baseline.init_weights(spec, seed)


def model_bits(spec, model: str, labels, k: int) -> np.ndarray:
    width = len(spec.measured) if model in QCNN_MODELS else spec.out_width
    return train.target_bits(labels, k, width)


def model_fit(spec, model: str, params, x, bits, cfg, m: int):
    if model in QCNN_MODELS:
        return train.fit(spec, params, x, bits, cfg, train.FreezePlan.for_model(spec, m))
    return baseline.ccnn_fit(spec, params, x, bits, cfg, m)


def latent(spec, model: str, params, x) -> np.ndarray:
    """What the linear readout sees: survivor Bloch vectors or output logits."""
    if model in QCNN_MODELS:
        return readout.extract_bloch(spec, params, x)
    return baseline.logits(spec, params, x)


def _n_layers(spec) -> int:
    return spec.n_layers


# ---------------------------------------------------------------------------
# pretraining cache


def cache_dir(override=None) -> Path:
    return Path(override or os.environ.get(CACHE_ENV, ".qtransfer-cache"))


def pretrain_key(task_id: str, model: str, n: int, seed: int, cfg: SweepConfig) -> str:
    blob = json.dumps(
        {
            "task": asdict(TASKS[task_id]),
            "model": model,
            "n": n,
            "seed": seed,
            "train": cfg.train_config(seed).to_dict(),
            "source_size": cfg.source_size,
            "test_size": cfg.test_size,
            "data_seed": cfg.data_seed,
            "schema": metrics.SCHEMA_VERSION,
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


def pretrain_source(task_id: str, model: str, n: int, seed: int, cfg: SweepConfig, root=None, cache=None):
    """Source-trained parameters, loaded from the cache when present.

    Returns ``(params, history, cached)``.  An unreadable cache entry is
    recomputed and overwritten.
    """
    root = str(dataio.data_dir(root))
    path = cache_dir(cache) / "pretrain" / f"{pretrain_key(task_id, model, n, seed, cfg)}.npz"
    if path.exists():
        try:
            with np.load(path) as z:
                return z["params"].copy(), z["history"].tolist(), True
        except (OSError, ValueError, KeyError, EOFError, zipfile.BadZipFile) as exc:
            log.warning("pretraining cache %s unreadable (%s); recomputing", path, exc)
    task = TASKS[task_id]
    data = task_data(task_id, n, cfg.source_size, cfg.test_size, cfg.data_seed, root)
    k = n_classes(task)
    spec = make_model(model, n, k)
    params, history = model_fit(
        spec, model, model_init(spec, model, seed), data.source_x, model_bits(spec, model, data.source_y, k),
        cfg.train_config(seed), _n_layers(spec),
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.stem + f".{os.getpid()}.tmp.npz")
    np.savez(tmp, params=params, history=np.asarray(history, dtype=float))
    os.replace(tmp, path)
    return params, history, False


# ---------------------------------------------------------------------------
# cells


def run_transfer(task_id: str, model: str, n: int, m: int, size: int, seed: int, cfg: SweepConfig, root=None, cache=None) -> RunRecord:
    """One transfer cell.  ``m == n`` starts from fresh parameters; otherwise the
    source model is loaded and its first ``n - m`` layers stay frozen.  The linear
    readout is refit on the target training set every time."""
    if not 0 <= m <= n:
        raise ValueError(f"m must be in 0..{n}, got {m}")
    t0 = time.perf_counter()
    root = str(dataio.data_dir(root))
    task = TASKS[task_id]
    data = task_data(task_id, n, cfg.source_size, cfg.test_size, cfg.data_seed, root)
    tc = cfg.train_config(seed)
    k = n_classes(task)
    spec = make_model(model, n, k)
    if m == n:
        params = model_init(spec, model, seed)
    else:
        params, _, _ = pretrain_source(task_id, model, n, seed, cfg, root, cache)
    idx = target_indices(data, size, seed, cfg.data_seed, tc.small_threshold)
    x, y = data.target_x[idx], data.target_y[idx]
    params, history = model_fit(spec, model, params, x, model_bits(spec, model, y, 2), tc, m)
    rule = readout.fit_rule(latent(spec, model, params, x), y)
    train_acc = metrics.accuracy(rule.decide(latent(spec, model, params, x)), y)
    acc = metrics.accuracy(rule.decide(latent(spec, model, params, data.test_x)), data.test_y)
    return RunRecord(
        task=task_id,
        model=model,
        n=n,
        m=m,
        target_size=size,
        seed=seed,
        accuracy=acc,
        from_scratch=(m == n),
        train_accuracy=train_acc,
        loss_history=[float(v) for v in history],
        config={
            "train": tc.to_dict(),
            "source_size": cfg.source_size,
            "test_size": cfg.test_size,
            "data_seed": cfg.data_seed,
            "readout_refit": True,
            "source_count": len(data.source_y),
            "target_count": len(idx),
            "model": spec.to_dict() if model in CCNN_MODELS else {"variant": model, "n_params": spec.n_params},
        },
        rule=rule.to_dict(),
        seconds=time.perf_counter() - t0,
    )


def _run_cell(args) -> RunRecord:
    cell, cfg, root, cache = args
    try:
        return run_transfer(*cell, cfg, root, cache)
    except Exception as exc:  # recorded, the sweep carries on
        task, model, n, m, size, seed = cell
        log.error("cell %s failed: %s", cell, exc)
        return RunRecord(task, model, n, m, size, seed, float("nan"), status="failed", error=f"{type(exc).__name__}: {exc}")


def _run_pretrain(args):
    key, cfg, root, cache = args
    pretrain_source(*key, cfg, root, cache)
    return key


def load_records(path) -> list[RunRecord]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError:
                log.warning("%s:%d: skipping unreadable record", path, lineno)
                continue
            if d.get("schema") != metrics.SCHEMA_VERSION:
                log.warning("%s:%d: schema %s ignored", path, lineno, d.get("schema"))
                continue
            out.append(RunRecord.from_dict(d))
    return out


def append_record(path, record: RunRecord) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a") as f:
        f.write(record.to_json() + "\n")


def sweep(cfg: SweepConfig, results=None, workers: int = 1, root=None, cache=None, on_record=None) -> list[RunRecord]:
    """Run every cell of ``cfg`` not already stored successfully in ``results``.

    Source pretrainings are done first (once per task, model, n and seed) so
    concurrent cells never race on the cache.  Returns the records of all
    requested cells, old and new.
    """
    done = {}
    if results is not None:
        for r in load_records(results):
            if r.status == "ok":
                done[r.key] = r
    cells = cfg.cells()
    todo = [c for c in cells if c not in done]
    pre = sorted({(t, mo, n, s) for t, mo, n, m, _, s in todo if m < n})
    pool = ProcessPoolExecutor(workers) if workers > 1 and len(todo) > 1 else None
    try:
        mapper = pool.map if pool else map
        for _ in mapper(_run_pretrain, [(p, cfg, root, cache) for p in pre]):
            pass
        for rec in mapper(_run_cell, [(c, cfg, root, cache) for c in todo]):
            if results is not None:
                append_record(results, rec)
            if on_record is not None:
                on_record(rec)
            done[rec.key] = rec
    finally:
        if pool:
            pool.shutdown()
    return [done[c] for c in cells if c in done]


def report(records, out_dir) -> dict[str, Path]:
    """Write the per-run CSV, loss histories, paired drop/RPR cells, the best-m
    table and the aggregate summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = list(records)
    summary = metrics.aggregate(records)
    files = {
        "results": out / "results.csv",
        "losses": out / "losses.csv",
        "cells": out / "cells.csv",
        "best_m": out / "best_m.csv",
        "summary": out / "summary.json",
    }
    files["results"].write_text(metrics.records_csv(records))
    files["losses"].write_text(metrics.loss_csv(records))
    files["cells"].write_text(metrics.rows_csv(summary["cells"]))
    files["best_m"].write_text(metrics.rows_csv(metrics.best_m_table(records)))
    flags = {"|".join(map(str, k)): v for k, v in metrics.transfer_flags(records).items()}
    task_level = {"|".join(map(str, k)): v for k, v in metrics.task_flags(records).items()}
    doc = {
        "schema": metrics.SCHEMA_VERSION,
        "records": len(records),
        "failed": sum(r.status != "ok" for r in records),
        "mean_abs_drop": summary["mean_abs_drop"],
        "mean_abs_drop_positive": summary["mean_abs_drop_positive"],
        "mean_rpr": summary["mean_rpr"],
        "positive_transfer": flags,
        "positive_transfer_task": task_level,
    }
    files["summary"].write_text(json.dumps(doc, indent=1, sort_keys=True))
    return files


def with_train(cfg: SweepConfig, **overrides) -> SweepConfig:
    return replace(cfg, train={**cfg.train, **overrides})
