import csv
import json
import logging

import numpy as np
import pytest

from qtransfer import harness, metrics
from qtransfer.harness import SweepConfig

TINY = dict(source_size=60, test_size=20, sizes=(60, 8), seeds=(0,), train={"epochs_large": 2, "epochs_small": 3})


def tiny(**kw):
    return SweepConfig(**{**TINY, **kw})


@pytest.fixture
def cache(tmp_path):
    return tmp_path / "cache"


def test_task_table():
    assert len(harness.TASKS) == 7
    assert harness.TASKS["tl2"].source_classes == (5, 7) and harness.TASKS["tl2"].target_classes == (1, 2)
    assert harness.TASKS["tl6"].multiclass and harness.TASKS["tl7"].source_dataset == "fashion"
    assert not harness.TASKS["tl5"].multiclass


def test_task_data_shapes_and_range(fake_data):
    d = harness.task_data("tl1", 3, 60, 20, 0, str(fake_data))
    assert d.source_x.shape == (60, 8) and d.test_x.shape == (20, 8)
    assert set(d.source_y) == {0, 1} and set(d.target_y) == {0, 1}
    assert d.source_x.min() >= 0 and d.source_x.max() <= np.pi
    assert d.target_x.min() >= 0 and d.target_x.max() <= np.pi


def test_test_images_never_in_training_pool(fake_data):
    # class 0 of the fake mnist training split carries a copy of a test image
    d = harness.task_data("tl3", 3, 60, 40, 0, str(fake_data))
    assert not set(d.test_hash) & set(d.target_hash)
    assert len(d.target_y) == 119


def test_multiclass_source_labels(fake_data):
    d = harness.task_data("tl6", 3, 200, 20, 0, str(fake_data))
    assert set(d.source_y) == set(range(8))


def test_small_sets_balanced_and_seeded(fake_data):
    d = harness.task_data("tl1", 3, 60, 20, 0, str(fake_data))
    a = harness.target_indices(d, 8, 0, 0)
    b = harness.target_indices(d, 8, 1, 0)
    assert np.bincount(d.target_y[a]).tolist() == [4, 4]
    assert not np.array_equal(a, b)
    assert np.array_equal(harness.target_indices(d, 60, 0, 0), harness.target_indices(d, 60, 1, 0))
    with pytest.raises(harness.DatasetError):
        harness.target_indices(d, 7, 0, 0)


def test_oversized_requests_take_everything(fake_data, caplog):
    with caplog.at_level(logging.WARNING, logger="qtransfer.harness"):
        d = harness.task_data("tl2", 3, 10_000, 20, 0, str(fake_data))
        idx = harness.target_indices(d, 10_000, 0, 0)
    assert len(d.source_y) == 120 and len(idx) == len(d.target_y)
    assert caplog.text.count("using all") == 2
    with pytest.raises(harness.DatasetError):
        harness.task_data("tl2", 3, 60, 10_000, 0, str(fake_data))


def test_pretrain_cache_hit_is_bitwise(fake_data, cache):
    cfg = tiny()
    p1, h1, c1 = harness.pretrain_source("tl1", "qcnn-z", 3, 0, cfg, fake_data, cache)
    p2, h2, c2 = harness.pretrain_source("tl1", "qcnn-z", 3, 0, cfg, fake_data, cache)
    assert (c1, c2) == (False, True)
    assert np.array_equal(p1, p2) and h1 == h2


def test_pretrain_key_depends_on_inputs():
    cfg = tiny()
    k = harness.pretrain_key("tl1", "qcnn-z", 3, 0, cfg)
    assert k == harness.pretrain_key("tl1", "qcnn-z", 3, 0, tiny())
    assert k != harness.pretrain_key("tl1", "qcnn-z", 3, 1, cfg)
    assert k != harness.pretrain_key("tl2", "qcnn-z", 3, 0, cfg)
    assert k != harness.pretrain_key("tl1", "qcnn-z", 3, 0, harness.with_train(cfg, lr=0.02))


def test_corrupted_cache_is_recomputed(fake_data, cache, caplog):
    cfg = tiny()
    p1, _, _ = harness.pretrain_source("tl1", "ccnn-a", 3, 0, cfg, fake_data, cache)
    (path,) = (cache / "pretrain").glob("*.npz")
    path.write_bytes(b"not a zip file")
    with caplog.at_level(logging.WARNING, logger="qtransfer.harness"):
        p2, _, cached = harness.pretrain_source("tl1", "ccnn-a", 3, 0, cfg, fake_data, cache)
    assert not cached and "unreadable" in caplog.text
    assert np.array_equal(p1, p2)
    assert harness.pretrain_source("tl1", "ccnn-a", 3, 0, cfg, fake_data, cache)[2]


def test_from_scratch_and_frozen_cells(fake_data, cache):
    cfg = tiny()
    scratch = harness.run_transfer("tl1", "qcnn-z", 3, 3, 8, 0, cfg, fake_data, cache)
    frozen = harness.run_transfer("tl1", "qcnn-z", 3, 0, 8, 0, cfg, fake_data, cache)
    assert scratch.from_scratch and len(scratch.loss_history) == 3
    assert not frozen.from_scratch and frozen.loss_history == []
    assert frozen.config["readout_refit"] and set(frozen.rule) == {"w", "b", "axis", "angle"}
    assert frozen.config["source_count"] == 60 and frozen.config["target_count"] == 8
    assert 0 <= frozen.accuracy <= 1
    with pytest.raises(ValueError):
        harness.run_transfer("tl1", "qcnn-z", 3, 4, 8, 0, cfg, fake_data, cache)


@pytest.mark.parametrize("model", ["qcnn-g", "ccnn-b"])
def test_cell_is_deterministic(fake_data, tmp_path, model):
    cfg = tiny()
    runs = [harness.run_transfer("tl2", model, 3, 1, 8, 0, cfg, fake_data, tmp_path / f"c{i}") for i in range(2)]
    assert runs[0].accuracy == runs[1].accuracy
    assert runs[0].loss_history == runs[1].loss_history
    assert runs[0].rule == runs[1].rule


def test_multiclass_source_transfers(fake_data, cache):
    cfg = tiny(source_size=200)
    for model in ("qcnn-n", "ccnn-a"):
        rec = harness.run_transfer("tl6", model, 3, 1, 8, 0, cfg, fake_data, cache)
        assert rec.status == "ok"


def test_sweep_fixture_records_and_report(fake_data, cache, tmp_path):
    cfg = tiny(tasks=("tl1", "tl2"), models=("ccnn-a",), ms=(0, 1, 3), sizes=(8,))
    results = tmp_path / "records.jsonl"
    records = harness.sweep(cfg, results, root=fake_data, cache=cache)
    assert len(records) == 6 and all(r.status == "ok" for r in records)
    assert len(results.read_text().splitlines()) == 6
    files = harness.report(records, tmp_path / "report")
    with open(files["results"]) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 6 and set(rows[0]) == set(metrics.CSV_COLUMNS)
    best = files["best_m"].read_text().splitlines()
    assert len(best) == 1 + 2
    summary = json.loads(files["summary"].read_text())
    assert summary["records"] == 6 and summary["failed"] == 0


def test_sweep_rerun_is_noop(fake_data, cache, tmp_path):
    cfg = tiny(tasks=("tl1",), models=("ccnn-a",), ms=(0, 3), sizes=(8,))
    results = tmp_path / "records.jsonl"
    first = harness.sweep(cfg, results, root=fake_data, cache=cache)
    before = results.read_text()
    seen = []
    second = harness.sweep(cfg, results, root=fake_data, cache=cache, on_record=seen.append)
    assert seen == [] and results.read_text() == before
    assert [r.accuracy for r in first] == [r.accuracy for r in second]


def test_empty_sweep(fake_data, tmp_path):
    assert harness.sweep(SweepConfig(), tmp_path / "r.jsonl", root=fake_data) == []
    assert not (tmp_path / "r.jsonl").exists()


def test_failed_cell_is_recorded_and_sweep_continues(fake_data, cache, tmp_path):
    cfg = tiny(tasks=("tl1",), models=("ccnn-a",), ms=(3,), sizes=(8, 7))
    records = harness.sweep(cfg, tmp_path / "r.jsonl", root=fake_data, cache=cache)
    status = {r.target_size: r.status for r in records}
    assert status == {8: "ok", 7: "failed"}
    failed = [r for r in records if r.status == "failed"][0]
    assert "DatasetError" in failed.error


def test_parallel_sweep_matches_serial(fake_data, tmp_path):
    cfg = tiny(tasks=("tl1",), models=("ccnn-a",), ms=(0, 3), sizes=(8,))
    serial = harness.sweep(cfg, None, 1, fake_data, tmp_path / "a")
    parallel = harness.sweep(cfg, None, 2, fake_data, tmp_path / "b")
    assert [r.accuracy for r in serial] == [r.accuracy for r in parallel]


def test_full_grid_is_expressible():
    cfg = SweepConfig(tasks=tuple(harness.TASKS), models=harness.MODELS, ns=(3, 4))
    # (4 + 5) depths, 2 sizes, 3 seeds per task and model
    assert len(cfg.cells()) == 7 * 5 * 9 * 2 * 3


def test_config_validation():
    with pytest.raises(ValueError):
        SweepConfig(tasks=("tl9",))
    with pytest.raises(ValueError):
        SweepConfig(ns=(5,))
    with pytest.raises(ValueError):
        SweepConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        SweepConfig(train={"momentum": 0.9})
    assert SweepConfig.from_dict({"ms": [1, 2], "tasks": ["tl1"]}).depths(3) == [1, 2]
