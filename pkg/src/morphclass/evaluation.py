"""Cross-validation, metrics and the brute-force oracle."""
from __future__ import annotations

import csv
import io
import logging
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .distance import dt_array
from .grid import DEDUP, MULTISET, Dataset, GridSpec, build_spec, cells_of

log = logging.getLogger(__name__)

POSITIVE = 1
CSV_FIELDS = ("classifier", "dataset", "acc", "tp", "tn", "train_s", "test_s")


# -- folds -----------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    assignment: np.ndarray  # fold id per instance
    k: int
    seed: int

    def test_index(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == f)

    def train_index(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != f)

    def splits(self):
        for f in range(self.k):
            yield self.train_index(f), self.test_index(f)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


def kfold(dataset: Dataset, k: int = 10, seed: int = 0) -> FoldPlan:
    """Stratified plan: each class is shuffled, classes are concatenated and
    the sequence is dealt round-robin into ``k`` folds."""
    n = dataset.n
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError(f"need at least k={k} instances, got {n}")
    rng = np.random.default_rng(seed)
    order = []
    for c in range(1, dataset.L + 1):
        idx = np.flatnonzero(dataset.y == c)
        if 0 < idx.size < k:
            warnings.warn(f"class {c} has {idx.size} < {k} instances; "
                          "it cannot appear in every fold", stacklevel=2)
        order.append(rng.permutation(idx))
    order = np.concatenate(order)
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = np.arange(n) % k
    return FoldPlan(assignment, k, seed)


# -- metrics ---------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    accuracy: float
    tp_rate: float | None
    tn_rate: float | None
    confusion: np.ndarray  # truth x prediction, 1-based ids at index id-1
    n: int

    def row(self, classifier: str, dataset: str) -> str:
        """``MkNN_Rep iris2d 95.0 98.0 92.0``; absent rates print as ``-``."""
        return " ".join([classifier, dataset] + [_pct(v) for v in
                                                 (self.accuracy, self.tp_rate, self.tn_rate)])


def _pct(v) -> str:
    return "-" if v is None else f"{100 * v:.1f}"


def metrics(predictions, truth, positive_class: int = POSITIVE, L: int | None = None) -> Metrics:
    pred = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError("predictions and truth differ in length")
    n = truth.size
    L = L or int(max(pred.max(initial=1), truth.max(initial=1)))
    conf = np.zeros((L, L), dtype=np.int64)
    np.add.at(conf, (truth - 1, pred - 1), 1)
    acc = float(np.trace(conf)) / n if n else 0.0
    pos = truth == positive_class
    tp = float(np.mean(pred[pos] == positive_class)) if pos.any() else None
    tn = float(np.mean(pred[~pos] != positive_class)) if (~pos).any() else None
    return Metrics(acc, tp, tn, conf, n)


# -- oracle ----------------------------------------------------------------

def brute_knn(train: Dataset, query, k: int, spec: GridSpec | None = None,
              mode: str = MULTISET):
    """Reference classifier built from a plain sort over training cells.

    Training cells are ordered by iterative distance to the query cell and
    whole equal-distance groups are taken until ``k`` instances are seen.
    Majority vote, smallest class id on ties.  A 2-D ``query`` of shape
    ``(m, p)`` returns an array of ``m`` labels.
    """
    if train.n < 1:
        raise ValueError("empty training set")
    if k < 1:
        raise ValueError("k must be >= 1")
    spec = spec or build_spec(train)
    cells, _ = cells_of(train.X, spec)
    labels = train.y
    if mode == DEDUP:
        keyed = np.unique(np.column_stack([cells, labels]), axis=0)
        cells, labels = keyed[:, :-1], keyed[:, -1]
    query = np.asarray(query, dtype=float)
    single = query.ndim == 1
    q, _ = cells_of(np.atleast_2d(query), spec)
    out = np.empty(len(q), dtype=np.int64)
    onehot = np.eye(train.L, dtype=np.int64)[labels - 1]
    kth = min(k, len(labels)) - 1  # the group holding the k-th instance
    for lo in range(0, len(q), 512):
        block = q[lo:lo + 512]
        d = dt_array(cells[None, :, 0] - block[:, None, 0], cells[None, :, 1] - block[:, None, 1])
        cutoff = np.partition(d, kth, axis=1)[:, kth]
        votes = (d <= cutoff[:, None]).astype(np.int64) @ onehot
        out[lo:lo + 512] = np.argmax(votes, axis=1) + 1
    return int(out[0]) if single else out


# -- experiments -----------------------------------------------------------

class Learner(Protocol):
    label: str

    def fit(self, dataset: Dataset): ...


@dataclass(frozen=True)
class ExperimentResult:
    classifier: str
    dataset: str
    metrics: Metrics
    predictions: np.ndarray  # out-of-fold prediction per instance
    train_s: float
    test_s: float

    def row(self) -> str:
        return self.metrics.row(self.classifier, self.dataset)

    def csv_row(self) -> dict:
        m = self.metrics
        return {"classifier": self.classifier, "dataset": self.dataset,
                "acc": _pct(m.accuracy), "tp": _pct(m.tp_rate), "tn": _pct(m.tn_rate),
                "train_s": f"{self.train_s:.3f}", "test_s": f"{self.test_s:.3f}"}


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("MC_THREADS", "1")))
    except ValueError:
        return 1


def cross_predict(dataset: Dataset, learner: Learner, plan: FoldPlan,
                  workers: int | None = None, fast: bool = False
                  ) -> tuple[np.ndarray, float, float]:
    """Out-of-fold predictions plus total train and test seconds.

    With ``fast`` the learner's ``predict(train, X)`` shortcut is used when it
    has one; labels are identical, timings then lump training and testing.
    """
    pred = np.zeros(dataset.n, dtype=np.int64)

    def run(split):
        tr, te = split
        t0 = time.perf_counter()
        if fast and hasattr(learner, "predict"):
            out = learner.predict(dataset.subset(tr), dataset.X[te])
            return te, out, time.perf_counter() - t0, 0.0
        model = learner.fit(dataset.subset(tr))
        t1 = time.perf_counter()
        out = model.classify_many(dataset.X[te])
        return te, out, t1 - t0, time.perf_counter() - t1

    splits = list(plan.splits())
    workers = workers or worker_count()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, splits))
    else:
        results = [run(s) for s in splits]
    train_s = test_s = 0.0
    for te, out, a, b in results:
        pred[te] = out
        train_s += a
        test_s += b
    return pred, train_s, test_s


def run_experiment(dataset: Dataset, learner: Learner, plan: FoldPlan | None = None,
                   workers: int | None = None) -> ExperimentResult:
    plan = plan or kfold(dataset)
    pred, train_s, test_s = cross_predict(dataset, learner, plan, workers)
    m = metrics(pred, dataset.y, L=dataset.L)
    result = ExperimentResult(learner.label, dataset.name, m, pred, train_s, test_s)
    log.info("%s", result.row())
    return result


def cv_accuracy(dataset: Dataset, learner: Learner, plan: FoldPlan) -> float:
    pred, _, _ = cross_predict(dataset, learner, plan, fast=True)
    return float(np.mean(pred == dataset.y))


def format_table(results: Sequence[ExperimentResult]) -> str:
    rows = [("Classifier", "Dataset", "Acc", "TP", "TN")]
    for r in results:
        m = r.metrics
        rows.append((r.classifier, r.dataset, _pct(m.accuracy), _pct(m.tp_rate),
                     _pct(m.tn_rate)))
    widths = [max(len(row[i]) for row in rows) for i in range(5)]
    return "\n".join("  ".join(c.ljust(w) if i < 2 else c.rjust(w)
                               for i, (c, w) in enumerate(zip(row, widths)))
                     for row in rows)


def to_csv(results: Sequence[ExperimentResult]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in results:
        writer.writerow(r.csv_row())
    return buf.getvalue()
