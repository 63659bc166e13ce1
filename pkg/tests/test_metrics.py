import json
import math

import numpy as np
import pytest

from qtransfer import metrics
from qtransfer.metrics import RunRecord


def rec(task, model, m, size, seed, acc, n=3, status="ok"):
    return RunRecord(task=task, model=model, n=n, m=m, target_size=size, seed=seed, accuracy=acc, status=status)


def test_rpr_published_pairs():
    assert metrics.rpr(0.9675, 0.9694) == pytest.approx(0.99804, abs=1e-5)
    assert metrics.rpr(0.9731, 0.9312) == pytest.approx(1.0450, abs=1e-4)


def test_accuracy_drop_published_pair():
    assert metrics.accuracy_drop(0.9824, 0.8620) == pytest.approx(0.1204, abs=1e-12)


def test_drop_sign_is_kept():
    assert metrics.accuracy_drop(0.8, 0.8) == 0
    assert metrics.accuracy_drop(0.8, 0.9) == pytest.approx(-0.1)


def test_rpr_zero_large_is_an_error():
    with pytest.raises(metrics.MetricError):
        metrics.rpr(0.5, 0.0)


@pytest.mark.parametrize("a,b,k", [(0.3, 0.7, 2.0), (0.91, 0.55, 0.37), (0.5, 0.5, 10.0)])
def test_rpr_scale_invariant(a, b, k):
    assert metrics.rpr(a, a) == 1.0
    assert metrics.rpr(k * a, k * b) == pytest.approx(metrics.rpr(a, b), rel=1e-14)


@pytest.mark.parametrize(
    "accs,expected",
    [
        ({1: 0.90, 2: 0.95, 3: 0.92}, True),
        ({1: 0.90, 3: 0.95}, False),
        ({0: 0.95, 3: 0.95}, False),
    ],
)
def test_positive_transfer(accs, expected):
    assert metrics.positive_transfer(accs, 3) is expected


def test_positive_transfer_needs_scratch_cell():
    with pytest.raises(metrics.MetricError):
        metrics.positive_transfer({0: 0.9, 1: 0.8}, 3)


@pytest.mark.parametrize("f", [np.sqrt, np.exp, lambda a: 3 * a - 1, lambda a: a**3])
def test_positive_transfer_monotone_invariant(f):
    rng = np.random.default_rng(4)
    for _ in range(50):
        accs = dict(enumerate(np.round(rng.uniform(0.5, 1.0, 4), 2)))
        mapped = {m: float(f(a)) for m, a in accs.items()}
        assert metrics.positive_transfer(accs, 3) == metrics.positive_transfer(mapped, 3)


def test_accuracy_basic_and_errors():
    assert metrics.accuracy([1, 0, 1, 1], [1, 1, 1, 0]) == 0.5
    with pytest.raises(metrics.MetricError):
        metrics.accuracy([], [])
    with pytest.raises(metrics.MetricError):
        metrics.accuracy([1, 0], [1])


def test_record_rejects_bad_accuracy_unless_failed():
    with pytest.raises(metrics.MetricError):
        rec("tl1", "qcnn-z", 0, 40, 0, 1.5)
    failed = rec("tl1", "qcnn-z", 0, 40, 0, float("nan"), status="failed")
    assert failed.status == "failed"


def test_record_round_trip():
    r = rec("tl2", "ccnn-b", 2, 40, 1, 0.8125)
    r.loss_history = [0.9, 0.7]
    back = RunRecord.from_dict(json.loads(r.to_json()))
    assert back == r


# four records per model: two tasks, one m, two sizes, n=1 so m=1 is from scratch
FIXTURE = [
    rec("tlA", "q", 1, 100, 0, 0.90, n=1),
    rec("tlA", "q", 1, 10, 0, 0.80, n=1),
    rec("tlB", "q", 1, 100, 0, 0.70, n=1),
    rec("tlB", "q", 1, 10, 0, 0.77, n=1),
    rec("tlA", "c", 1, 100, 0, 0.95, n=1),
    rec("tlA", "c", 1, 10, 0, 0.60, n=1),
    rec("tlB", "c", 1, 100, 0, 0.85, n=1),
    rec("tlB", "c", 1, 10, 0, 0.85, n=1),
]


def test_aggregate_matches_hand_recomputation():
    out = metrics.aggregate(FIXTURE)
    # q: |0.90-0.80| = 0.10, |0.70-0.77| = 0.07 -> 0.085
    # c: |0.95-0.60| = 0.35, |0.85-0.85| = 0    -> 0.175
    assert out["mean_abs_drop"]["q"] == pytest.approx(0.085, abs=1e-12)
    assert out["mean_abs_drop"]["c"] == pytest.approx(0.175, abs=1e-12)
    # q: (0.80/0.90 + 0.77/0.70) / 2 ; c: (0.60/0.95 + 1) / 2
    assert out["mean_rpr"]["q|m=1"] == pytest.approx((0.8 / 0.9 + 1.1) / 2, abs=1e-12)
    assert out["mean_rpr"]["c|m=1"] == pytest.approx((0.6 / 0.95 + 1.0) / 2, abs=1e-12)
    assert len(out["cells"]) == 4


def test_aggregate_single_group_equals_record():
    out = metrics.aggregate(FIXTURE[:2])
    assert out["mean_abs_drop"] == {"q": pytest.approx(0.10)}
    assert out["mean_rpr"] == {"q|m=1": pytest.approx(0.8 / 0.9)}


def test_aggregate_identical_groups_give_equal_summaries():
    twin = [rec(r.task, "twin", r.m, r.target_size, r.seed, r.accuracy, n=r.n) for r in FIXTURE if r.model == "q"]
    out = metrics.aggregate(FIXTURE + twin)
    assert out["mean_abs_drop"]["q"] == out["mean_abs_drop"]["twin"]
    assert out["mean_rpr"]["q|m=1"] == out["mean_rpr"]["twin|m=1"]


def test_aggregate_mean_lies_between_extremes():
    rng = np.random.default_rng(0)
    records = []
    for task in ("a", "b", "c"):
        for m in range(4):
            for size in (40, 2000):
                for seed in range(3):
                    records.append(rec(task, "q", m, size, seed, float(rng.uniform(0.5, 1))))
    out = metrics.aggregate(records)
    drops = [abs(r["drop"]) for r in out["cells"]]
    assert min(drops) <= out["mean_abs_drop"]["q"] <= max(drops)


def test_seeds_are_averaged_and_failures_skipped():
    records = [
        rec("t", "q", 0, 40, 0, 0.6),
        rec("t", "q", 0, 40, 1, 0.8),
        rec("t", "q", 0, 40, 2, float("nan"), status="failed"),
    ]
    assert metrics.cell_means(records) == {("t", "q", 3, 0, 40): pytest.approx(0.7)}


def test_positive_subset_uses_task_flag():
    records = []
    # task "up": partial retraining beats scratch for model q only; task "flat": nobody beats scratch
    for task, accs in (("up", {0: 0.9, 3: 0.8}), ("flat", {0: 0.7, 3: 0.8})):
        for model in ("q", "c"):
            for m, a in accs.items():
                bump = 0.0 if model == "q" else -0.2 * (m == 0)
                records.append(rec(task, model, m, 2000, 0, a + bump))
                records.append(rec(task, model, m, 40, 0, a + bump - 0.1))
    flags = metrics.task_flags(records)
    assert flags[("up", 3, 2000)] and not flags[("flat", 3, 2000)]
    out = metrics.aggregate(records)
    assert set(c["task"] for c in out["cells"]) == {"up", "flat"}
    assert out["mean_abs_drop_positive"]["c"] == pytest.approx(0.1)


def test_include_m_filter():
    records = [rec("t", "q", m, s, 0, a) for m, s, a in [(0, 2000, 0.9), (0, 40, 0.5), (3, 2000, 0.9), (3, 40, 0.8)]]
    assert metrics.aggregate(records)["mean_abs_drop"]["q"] == pytest.approx(0.25)
    assert metrics.aggregate(records, include_m=[3])["mean_abs_drop"]["q"] == pytest.approx(0.1)


def test_best_m_prefers_smaller_on_ties():
    records = [rec("t", "q", m, 40, 0, a) for m, a in enumerate([0.7, 0.9, 0.9, 0.8])]
    (row,) = metrics.best_m_table(records)
    assert row["m"] == 1 and row["accuracy"] == 0.9


def test_csv_outputs():
    r = rec("tl1", "qcnn-g", 2, 40, 1, 0.75)
    r.loss_history = [1.0, 0.5]
    lines = metrics.records_csv([r]).splitlines()
    assert lines[0] == "model,n,m,task,size,seed,accuracy"
    assert lines[1] == "qcnn-g,3,2,tl1,40,1,0.75"
    loss = metrics.loss_csv([r]).splitlines()
    assert loss[0] == "run_id,epoch,loss" and len(loss) == 3
    assert metrics.rows_csv([]) == ""
    assert not math.isnan(float(lines[1].split(",")[-1]))
