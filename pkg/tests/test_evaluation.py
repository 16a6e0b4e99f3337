import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from morphclass.config import TrainerConfig
from morphclass.datasets import diabetes, iris2d
from morphclass.grid import DEDUP, MULTISET, Dataset, build_spec, discretize
from morphclass.evaluation import (CSV_FIELDS, brute_knn, cross_predict, cv_accuracy,
                                   format_table, kfold, metrics, run_experiment, to_csv,
                                   worker_count)
from morphclass.mknn import MkNNParams, train_mknn


def cell_centres(spec):
    """One feature vector per grid cell that maps back onto that cell."""
    xs, ys = np.meshgrid(np.arange(spec.dims[0]), np.arange(spec.dims[1]), indexing="ij")
    cells = np.column_stack([xs.ravel(), ys.ravel()])
    return cells, (cells + np.asarray(spec.origin)) / np.asarray(spec.precision)


# -- folds -----------------------------------------------------------------

def test_diabetes_fold_sizes():
    plan = kfold(diabetes(), 10, seed=3)
    assert sorted(set(plan.sizes().tolist())) == [76, 77]
    assert plan.sizes().sum() == 768


def test_balanced_folds_are_exact():
    ds = Dataset(np.arange(100.0).reshape(-1, 1), np.repeat([1, 2], 50))
    plan = kfold(ds, 10, seed=0)
    for _, te in plan.splits():
        assert len(te) == 10
        assert np.bincount(ds.y[te], minlength=3)[1:].tolist() == [5, 5]


@given(st.integers(20, 120), st.integers(2, 10), st.integers(0, 2**31))
def test_folds_partition_and_stratify(n, k, seed):
    y = np.arange(n) % 3 + 1
    ds = Dataset(np.zeros((n, 1)), y)
    plan = kfold(ds, k, seed)
    seen = np.concatenate([te for _, te in plan.splits()])
    assert sorted(seen.tolist()) == list(range(n))
    for c in (1, 2, 3):
        per_fold = np.bincount(plan.assignment[y == c], minlength=k)
        assert per_fold.max() - per_fold.min() <= 1
    for tr, te in plan.splits():
        assert not set(tr) & set(te)
    assert np.array_equal(kfold(ds, k, seed).assignment, plan.assignment)


def test_kfold_errors_and_warning():
    ds = Dataset(np.zeros((12, 1)), [1] * 9 + [2] * 3)
    with pytest.warns(UserWarning, match="class 2"):
        kfold(ds, 5)
    with pytest.raises(ValueError):
        kfold(ds, 1)
    with pytest.raises(ValueError):
        kfold(ds, 20)


# -- metrics ---------------------------------------------------------------

def test_metrics_example():
    m = metrics([1, 1, 2, 2, 1], [1, 2, 2, 2, 1])
    assert m.accuracy == pytest.approx(0.8)
    assert m.tp_rate == 1.0 and m.tn_rate == pytest.approx(2 / 3)
    assert m.confusion.tolist() == [[2, 0], [1, 2]]
    assert m.row("MkNN", "toy") == "MkNN toy 80.0 100.0 66.7"


def test_absent_rate_prints_dash():
    m = metrics([1, 1], [1, 1])
    assert m.tn_rate is None and m.row("MDC", "x").endswith("100.0 -")


@given(st.lists(st.tuples(st.integers(1, 4), st.integers(1, 4)), min_size=1, max_size=80))
def test_metric_identities(pairs):
    pred, truth = map(np.array, zip(*pairs))
    m = metrics(pred, truth, L=4)
    assert m.confusion.sum() == m.n == len(pairs)
    assert m.accuracy == pytest.approx(np.mean(pred == truth))
    assert m.confusion.sum(axis=1).tolist() == np.bincount(truth, minlength=5)[1:].tolist()
    if m.tp_rate is not None and m.tn_rate is not None and set(truth) <= {1, 2} \
            and set(pred) <= {1, 2}:
        pos = np.mean(truth == 1)
        assert m.accuracy == pytest.approx(pos * m.tp_rate + (1 - pos) * m.tn_rate)


def test_metrics_length_mismatch():
    with pytest.raises(ValueError):
        metrics([1], [1, 2])


# -- oracle ----------------------------------------------------------------

@st.composite
def knn_cases(draw):
    n = draw(st.integers(1, 40))
    L = draw(st.integers(1, 3))
    X = np.array(draw(st.lists(st.tuples(st.integers(0, 14), st.integers(0, 11)),
                               min_size=n, max_size=n)), dtype=float)
    y = np.array(draw(st.lists(st.integers(1, L), min_size=n, max_size=n)))
    y = np.unique(y, return_inverse=True)[1].ravel() + 1  # no empty classes
    return Dataset(X, y), \
        draw(st.sampled_from([1, 3, 5])), draw(st.sampled_from([MULTISET, DEDUP]))


@given(knn_cases())
def test_mknn_equals_brute_force(case):
    ds, k, mode = case
    spec = build_spec(ds, (1.0, 1.0))
    model = train_mknn(discretize(ds, spec, mode), MkNNParams(k=k, gamma=0))
    cells, feats = cell_centres(spec)
    for c, f in zip(cells, feats):
        assert model.labels[c[0], c[1]] == brute_knn(ds, f, k, spec, mode), tuple(c)


def test_brute_knn_whole_groups():
    # two class-2 points tie at the k-th distance and are both counted
    ds = Dataset(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([1, 2, 2]))
    spec = build_spec(ds, (1.0, 1.0), padding=0)
    assert brute_knn(ds, (0, 0), 1, spec) == 1
    assert brute_knn(ds, (0, 0), 2, spec) == 2
    assert brute_knn(ds, (0, 0), 99, spec) == 2


# -- experiments -----------------------------------------------------------

def test_run_experiment_is_deterministic():
    ds = iris2d()
    cfg = TrainerConfig("mknn", MULTISET, MkNNParams(k=5))
    a = run_experiment(ds, cfg, kfold(ds, 10, 1))
    b = run_experiment(ds, cfg, kfold(ds, 10, 1))
    assert np.array_equal(a.predictions, b.predictions)
    assert a.metrics.accuracy > 0.85
    assert a.row().startswith("MkNN_Rep iris2d ")


def test_fast_path_and_threads_agree(monkeypatch):
    ds = iris2d()
    cfg = TrainerConfig("mknn", DEDUP, MkNNParams(k=3))
    plan = kfold(ds, 5, 0)
    slow, _, _ = cross_predict(ds, cfg, plan)
    fast, _, _ = cross_predict(ds, cfg, plan, fast=True)
    threaded, _, _ = cross_predict(ds, cfg, plan, workers=3)
    assert np.array_equal(slow, fast) and np.array_equal(slow, threaded)
    assert cv_accuracy(ds, cfg, plan) == pytest.approx(np.mean(slow == ds.y))
    monkeypatch.setenv("MC_THREADS", "4")
    assert worker_count() == 4
    monkeypatch.setenv("MC_THREADS", "bogus")
    assert worker_count() == 1


def test_table_and_csv():
    ds = iris2d()
    res = [run_experiment(ds, TrainerConfig("mknn", m), kfold(ds, 5, 0)) for m in (MULTISET, DEDUP)]
    table = format_table(res).splitlines()
    assert table[0].split() == ["Classifier", "Dataset", "Acc", "TP", "TN"]
    assert [line.split()[0] for line in table[1:]] == ["MkNN_Rep", "MkNN"]
    text = to_csv(res).splitlines()
    assert text[0] == ",".join(CSV_FIELDS) and len(text) == 3


@given(knn_cases())
def test_brute_knn_batch_matches_single(case):
    ds, k, mode = case
    spec = build_spec(ds, (1.0, 1.0))
    _, feats = cell_centres(spec)
    batch = brute_knn(ds, feats, k, spec, mode)
    assert batch.tolist() == [brute_knn(ds, f, k, spec, mode) for f in feats]
