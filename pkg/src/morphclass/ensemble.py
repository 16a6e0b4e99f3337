"""Pairwise-feature ensembles for datasets with more than two attributes.

Every attribute pair gets its own 2-D model.  A binary (one-versus-rest)
problem is decided by majority over its most accurate pair models, and the
``L`` binary problems are consulted one after another in order of accuracy.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import comb
from pathlib import Path
from typing import Sequence

import numpy as np

from .compress import dumps_model, loads_model
from .config import TrainerConfig
from .evaluation import kfold
from .grid import Dataset, axis_pairs, project
from .model import LabelGrid, ModelError

IN, OUT = 1, 2


@dataclass(frozen=True)
class PairModel:
    axes: tuple[int, int]
    model: LabelGrid  # binary: 1 in-class, 2 out-of-class
    cv_accuracy: float
    # inner-CV out-of-fold votes on the training split, used to score subsets
    oof: np.ndarray | None = field(default=None, compare=False, repr=False)

    def vote(self, x) -> int:
        return self.model.classify(np.asarray(x)[list(self.axes)])

    def votes(self, X) -> np.ndarray:
        return self.model.classify_many(np.asarray(X)[:, list(self.axes)])


def _majority_in(votes: np.ndarray) -> np.ndarray:
    """Column votes (n, m) -> in-class where strictly more than half say in."""
    n_in = (votes == IN).sum(axis=1)
    return 2 * n_in > votes.shape[1]


@dataclass(frozen=True)
class BinaryEnsemble:
    target_class: int
    pair_models: tuple[PairModel, ...]
    top_n: int
    cv_accuracy: float = 0.0
    tp_rate: float | None = None
    tn_rate: float | None = None
    invert: bool = False

    def __post_init__(self):
        if not 1 <= self.top_n <= len(self.pair_models):
            raise ModelError(f"top_n={self.top_n} outside 1..{len(self.pair_models)}")

    @property
    def voters(self) -> tuple[PairModel, ...]:
        return self.pair_models[:self.top_n]

    def decide_many(self, X) -> np.ndarray:
        """Boolean in-class decision per row of ``X``."""
        votes = np.column_stack([pm.votes(X) for pm in self.voters])
        return _majority_in(votes)


def binary_vote(ensemble: BinaryEnsemble, instance) -> int:
    """``IN`` when most of the top models say in-class; ties go to ``OUT``."""
    n_in = sum(pm.vote(instance) == IN for pm in ensemble.voters)
    return IN if 2 * n_in > ensemble.top_n else OUT


@dataclass(frozen=True)
class MultiLabelModel:
    binaries: tuple[BinaryEnsemble, ...]
    fallback: int
    L: int
    p: int
    dataset_digest: str = ""

    def __post_init__(self):
        targets = sorted(b.target_class for b in self.binaries)
        if targets != list(range(1, self.L + 1)):
            raise ModelError("need exactly one binary problem per class")

    def classify(self, x) -> int:
        return multilabel_classify(self, x)

    def classify_many(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.p:
            raise ModelError(f"expected {self.p} attributes per instance")
        inside = {b.target_class: b.decide_many(X) for b in self.binaries}
        order = [(b.target_class, b.invert) for b in self.binaries]
        return sequential_decision(order, inside, self.fallback, X.shape[0])


def sequential_decision(order, inside: dict, fallback: int, n: int) -> np.ndarray:
    """Vectorised :func:`multilabel_classify` over precomputed binary decisions.

    ``order`` lists ``(target, invert)`` from most to least accurate and
    ``inside[target]`` holds the boolean in-class decisions.
    """
    decided = np.zeros(n, dtype=np.int64)
    eliminated = {t: np.zeros(n, dtype=bool) for t, _ in order}
    for t, invert in order:
        open_ = decided == 0
        eliminated[t] |= open_ & ~inside[t]
        if not invert:
            decided[open_ & inside[t]] = t
    for t, _ in order:
        decided[(decided == 0) & ~eliminated[t]] = t
    decided[decided == 0] = fallback
    return decided


def multilabel_classify(model: MultiLabelModel, instance) -> int:
    """Consult the binaries from most to least accurate.

    A regular binary answers with its class on an in-class vote and rules
    its class out otherwise.  An inverted binary (more reliable on negatives)
    can only rule its class out.  Without a decision, the first class not
    ruled out wins, else the fallback.
    """
    eliminated = set()
    for b in model.binaries:
        inside = binary_vote(b, instance) == IN
        if inside and not b.invert:
            return b.target_class
        if not inside:
            eliminated.add(b.target_class)
    for b in model.binaries:
        if b.target_class not in eliminated:
            return b.target_class
    return model.fallback


# -- training --------------------------------------------------------------

def _inner_folds(dataset: Dataset, folds: int, seed: int):
    k = min(folds, dataset.n)
    if k < 2:
        return None
    return kfold(dataset, k, seed)


@dataclass(frozen=True)
class PairScore:
    axes: tuple[int, int]
    cv_accuracy: float
    oof: np.ndarray


def pair_scores(dataset: Dataset, trainer: TrainerConfig, targets: Sequence[int],
                folds: int = 10, seed: int = 0) -> dict[int, list[PairScore]]:
    """Inner-CV accuracy and out-of-fold votes of every pair, per target.

    Lists come sorted by descending accuracy; ties keep axis-pair order.
    """
    if dataset.p < 2:
        raise ModelError("pairwise ensembles need at least 2 attributes")
    plan = _inner_folds(dataset, folds, seed)
    out: dict[int, list[PairScore]] = {t: [] for t in targets}
    for axes in axis_pairs(dataset.p):
        pair = project(dataset, axes)
        oof = {t: np.zeros(dataset.n, dtype=np.int64) for t in targets}
        if plan is None:
            oof = trainer.predict_binaries(pair, targets, pair.X)
        else:
            for tr, te in plan.splits():
                got = trainer.predict_binaries(pair.subset(tr), targets, pair.X[te])
                for t in targets:
                    oof[t][te] = got[t]
        for t in targets:
            truth = np.where(dataset.y == t, IN, OUT)
            oof[t].setflags(write=False)
            out[t].append(PairScore(tuple(axes), float(np.mean(oof[t] == truth)), oof[t]))
    for t in targets:
        out[t].sort(key=lambda ps: -ps.cv_accuracy)
    return out


def pair_models_by_target(dataset: Dataset, trainer: TrainerConfig, targets: Sequence[int],
                          folds: int = 10, seed: int = 0) -> dict[int, list[PairModel]]:
    """Pair models for several one-versus-rest problems at once.

    Each model carries its accuracy from ``folds``-fold CV on ``dataset``
    and the out-of-fold votes behind it.
    """
    scores = pair_scores(dataset, trainer, targets, folds, seed)
    finals = {axes: trainer.fit_binaries(project(dataset, axes), targets)
              for axes in axis_pairs(dataset.p)}
    return {t: [PairModel(ps.axes, finals[ps.axes][t], ps.cv_accuracy, ps.oof)
                for ps in scores[t]] for t in targets}


def build_pair_models(dataset: Dataset, trainer: TrainerConfig, folds: int = 10,
                      seed: int = 0) -> list[PairModel]:
    """``C(p, 2)`` models for a binary dataset (class 1 is in-class)."""
    if dataset.L > 2:
        raise ModelError("build_pair_models expects binary labels; use fit_multilabel")
    return pair_models_by_target(dataset, trainer, [1], folds, seed)[1]


def _vote_stats(oofs: Sequence[np.ndarray], truth: np.ndarray):
    pred = np.where(_majority_in(np.column_stack(oofs)), IN, OUT)
    acc = float(np.mean(pred == truth))
    pos = truth == IN
    tp = float(np.mean(pred[pos] == IN)) if pos.any() else None
    tn = float(np.mean(pred[~pos] == OUT)) if (~pos).any() else None
    invert = tp is not None and tn is not None and tn > tp
    return acc, tp, tn, invert


def make_binary(target: int, models: Sequence[PairModel], top_n: int,
                truth: np.ndarray) -> BinaryEnsemble:
    """Score the top-``top_n`` vote on the stored out-of-fold votes."""
    top_n = min(top_n, len(models))
    acc, tp, tn, invert = _vote_stats([pm.oof for pm in models[:top_n]], truth)
    return BinaryEnsemble(target, tuple(models), top_n, acc, tp, tn, invert)


@dataclass(frozen=True)
class EnsembleConfig:
    """Trainer for :class:`MultiLabelModel`; ``top_n=None`` uses every pair."""

    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    top_n: int | None = None
    folds: int = 10
    seed: int = 0
    auto_invert: bool = True

    @property
    def label(self) -> str:
        return self.trainer.label

    def with_params(self, **kw) -> "EnsembleConfig":
        own = {k: kw.pop(k) for k in ("top_n", "folds", "seed", "auto_invert") if k in kw}
        trainer = self.trainer.with_params(**kw) if kw else self.trainer
        return replace(self, trainer=trainer, **own)

    def fit(self, dataset: Dataset) -> MultiLabelModel:
        return fit_multilabel(dataset, self)

    def predict(self, train: Dataset, X) -> np.ndarray:
        return predict_multilabel(train, self, X)


def fit_multilabel(dataset: Dataset, config: EnsembleConfig = EnsembleConfig()) -> MultiLabelModel:
    targets = list(range(1, dataset.L + 1))
    by_target = pair_models_by_target(dataset, config.trainer, targets, config.folds,
                                      config.seed)
    top_n = config.top_n or comb(dataset.p, 2)
    binaries = []
    for t in targets:
        b = make_binary(t, by_target[t], top_n, np.where(dataset.y == t, IN, OUT))
        if not config.auto_invert and b.invert:
            b = replace(b, invert=False)
        binaries.append(b)
    binaries.sort(key=lambda b: (-b.cv_accuracy, b.target_class))
    return MultiLabelModel(tuple(binaries), binaries[-1].target_class, dataset.L,
                           dataset.p, dataset.digest())


def predict_multilabel(train: Dataset, config: EnsembleConfig, X) -> np.ndarray:
    """Labels ``fit_multilabel(train, config)`` would give ``X``.

    Pair models are only evaluated at the query points, which is much
    cheaper for MkNN.
    """
    X = np.asarray(X, dtype=float)
    targets = list(range(1, train.L + 1))
    scores = pair_scores(train, config.trainer, targets, config.folds, config.seed)
    top_n = min(config.top_n or comb(train.p, 2), comb(train.p, 2))
    preds = {axes: config.trainer.predict_binaries(project(train, axes), targets,
                                                   X[:, list(axes)])
             for axes in axis_pairs(train.p)}
    ranked = []
    inside = {}
    for t in targets:
        truth = np.where(train.y == t, IN, OUT)
        voters = scores[t][:top_n]
        acc, _, _, invert = _vote_stats([ps.oof for ps in voters], truth)
        ranked.append((-acc, t, invert and config.auto_invert))
        inside[t] = _majority_in(np.column_stack([preds[ps.axes][t] for ps in voters]))
    ranked.sort()
    order = [(t, inv) for _, t, inv in ranked]
    return sequential_decision(order, inside, order[-1][0], X.shape[0])


# -- manifest --------------------------------------------------------------

def _opt(v) -> str:
    return "none" if v is None else repr(float(v))


def _unopt(s: str):
    return None if s == "none" else float(s)


def dumps_manifest(model: MultiLabelModel, codec: str = "rle") -> str:
    lines = ["MCENSEMBLE 1",
             f"dataset {model.dataset_digest or 'unknown'}",
             f"labels {model.L}",
             f"features {model.p}",
             f"topn {max(b.top_n for b in model.binaries)}",
             "order " + " ".join(str(b.target_class) for b in model.binaries),
             f"fallback {model.fallback}"]
    for b in model.binaries:
        lines.append(f"binary {b.target_class} {b.top_n} {repr(b.cv_accuracy)} "
                     f"{_opt(b.tp_rate)} {_opt(b.tn_rate)} {int(b.invert)} "
                     f"{len(b.pair_models)}")
        for pm in b.pair_models:
            body = dumps_model(pm.model, codec).rstrip("\n").split("\n")
            lines.append(f"pair {pm.axes[0]} {pm.axes[1]} {repr(pm.cv_accuracy)}")
            lines.append(f"model {len(body)}")
            lines.extend(body)
    return "\n".join(lines) + "\n"


def loads_manifest(text: str) -> MultiLabelModel:
    lines = text.rstrip("\n").split("\n")
    if not lines or lines[0] != "MCENSEMBLE 1":
        raise ModelError("not an MCENSEMBLE 1 manifest")
    pos = 1

    def take(key):
        nonlocal pos
        if pos >= len(lines):
            raise ModelError(f"manifest truncated, expected {key!r}")
        parts = lines[pos].split(" ")
        if parts[0] != key:
            raise ModelError(f"line {pos + 1}: expected {key!r}, got {parts[0]!r}")
        pos += 1
        return parts[1:]

    digest = take("dataset")[0]
    L = int(take("labels")[0])
    p = int(take("features")[0])
    take("topn")
    take("order")
    fallback = int(take("fallback")[0])
    binaries = []
    for _ in range(L):
        t, top_n, acc, tp, tn, inv, npairs = take("binary")
        models = []
        for _ in range(int(npairs)):
            a0, a1, pacc = take("pair")
            nlines = int(take("model")[0])
            body = "\n".join(lines[pos:pos + nlines]) + "\n"
            pos += nlines
            models.append(PairModel((int(a0), int(a1)), loads_model(body), float(pacc)))
        binaries.append(BinaryEnsemble(int(t), tuple(models), int(top_n), float(acc),
                                       _unopt(tp), _unopt(tn), inv == "1"))
    return MultiLabelModel(tuple(binaries), fallback, L, p,
                           "" if digest == "unknown" else digest)


def save_manifest(model: MultiLabelModel, path, codec: str = "rle") -> int:
    data = dumps_manifest(model, codec).encode("ascii")
    Path(path).write_bytes(data)
    return len(data)


def load_manifest(path) -> MultiLabelModel:
    return loads_manifest(Path(path).read_text(encoding="ascii"))
