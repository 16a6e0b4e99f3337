"""Trainer configuration shared by the experiment, tuning and CLI layers."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .grid import (DEDUP, DEFAULT_CELLS, DEFAULT_PADDING, MULTISET, CountGrid, Dataset,
                   GridSpec, build_spec, cells_of, default_precision, discretize)
from .mdc import MDCParams, predict_at, train_mdc
from .mknn import (MkNNParams, absorb, binary_labels, counters_at, labels_from_counters,
                   majority_class, train_mknn)
from .model import LabelGrid, ModelError

ALGORITHMS = ("mknn", "mdc")


@dataclass(frozen=True)
class TrainerConfig:
    """How to turn a 2-D dataset into a :class:`LabelGrid`.

    ``cells`` sets the precision so each axis spans that many cells; an
    explicit ``precision`` vector takes priority.
    """

    algo: str = "mknn"
    mode: str = MULTISET
    mknn: MkNNParams = field(default_factory=MkNNParams)
    mdc: MDCParams = field(default_factory=MDCParams)
    cells: int = DEFAULT_CELLS
    precision: tuple[float, ...] | None = None
    padding: int = DEFAULT_PADDING

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ModelError(f"algo must be one of {ALGORITHMS}, got {self.algo!r}")
        if self.cells < 2:
            raise ModelError("cells must be >= 2")

    @property
    def label(self) -> str:
        """Table row name, e.g. ``MkNN_Rep``."""
        base = {"mknn": "MkNN", "mdc": "MDC"}[self.algo]
        return base + ("_Rep" if self.mode == MULTISET else "")

    def with_params(self, **kw) -> "TrainerConfig":
        """Copy with trainer parameters (and ``cells``) replaced by name."""
        top = {k: kw.pop(k) for k in ("cells", "mode", "padding", "precision") if k in kw}
        target = "mknn" if self.algo == "mknn" else "mdc"
        params = replace(getattr(self, target), **kw) if kw else getattr(self, target)
        return replace(self, **{target: params}, **top)

    def spec_for(self, dataset: Dataset) -> GridSpec:
        precision = self.precision or default_precision(dataset, self.cells)
        return build_spec(dataset, precision, self.padding)

    def grid_for(self, dataset: Dataset) -> CountGrid:
        return discretize(dataset, self.spec_for(dataset), self.mode)

    def train(self, grid: CountGrid) -> LabelGrid:
        if self.algo == "mknn":
            return train_mknn(grid, self.mknn)
        return train_mdc(grid, self.mdc)

    def fit(self, dataset: Dataset) -> LabelGrid:
        return self.train(self.grid_for(dataset))

    def predict(self, train: Dataset, X) -> np.ndarray:
        """Labels that ``fit(train)`` would give the rows of ``X``.

        Both trainers resolve only the queried cells.
        """
        grid = self.grid_for(train)
        cells, _ = cells_of(X, grid.spec)
        if self.algo == "mdc":
            return predict_at(grid, self.mdc, cells)
        T = counters_at(grid, self.mknn, cells)
        return labels_from_counters(T, majority_class(grid.class_totals()))

    def predict_binaries(self, train: Dataset, targets: Sequence[int], X) -> dict[int, np.ndarray]:
        """Labels that ``fit_binaries(train, targets)`` would give the rows of ``X``."""
        if self.algo == "mknn" and self.mode == DEDUP:
            return {t: m.classify_many(X) for t, m in self.fit_binaries(train, targets).items()}
        grid = self.grid_for(train)
        cells, _ = cells_of(X, grid.spec)
        if self.algo == "mdc":
            sums = grid.totals()
            return {t: predict_at(binary_grid(grid, t, sums), self.mdc, cells) for t in targets}
        T = counters_at(grid, self.mknn, cells)
        totals = grid.class_totals()
        return {t: binary_labels(T, t, majority_class([totals[t - 1], totals.sum() - totals[t - 1]]))
                for t in targets}

    def fit_binaries(self, dataset: Dataset, targets: Sequence[int]) -> dict[int, LabelGrid]:
        """One-versus-rest models (in-class = 1, out = 2) for each target.

        In multiset mode MkNN shares a single shell sweep across targets.
        """
        spec = self.spec_for(dataset)
        if self.algo == "mknn" and self.mode == MULTISET:
            grid = discretize(dataset, spec, self.mode)
            state = absorb(grid, self.mknn)
            totals = grid.class_totals()
            out = {}
            for t in targets:
                inside = totals[t - 1]
                fallback = majority_class([inside, totals.sum() - inside])
                labels = binary_labels(state.counters, t, fallback)
                prov = {"trainer": "mknn", "mode": self.mode, "target": t}
                out[t] = LabelGrid(spec, labels, 2, prov)
            return out
        grid = discretize(dataset, spec, self.mode)
        sums = grid.totals()
        return {t: self.train(binary_grid(grid, t, sums)) for t in targets}


def binary_grid(grid: CountGrid, target: int, cell_totals: np.ndarray | None = None) -> CountGrid:
    """Counts of the ``target``-versus-rest problem (in-class = 1, out = 2).

    Equal to discretizing :func:`one_vs_rest` of the same data.
    ``cell_totals`` may pass a precomputed ``grid.totals()``.
    """
    inside = grid.counts[..., target - 1]
    rest = (grid.totals() if cell_totals is None else cell_totals) - inside
    if grid.mode == DEDUP:
        rest = np.minimum(rest, 1)
    return CountGrid(grid.spec, np.stack([inside, rest], axis=-1), grid.mode, grid.clamped)


def one_vs_rest(dataset: Dataset, target: int) -> Dataset:
    """Relabel: ``target`` -> 1 (in-class), everything else -> 2."""
    y = np.where(dataset.y == target, 1, 2)
    name = dataset.class_names[target - 1]
    return Dataset(dataset.X, y, dataset.attribute_names, (name, f"not-{name}"),
                   dataset.name)
