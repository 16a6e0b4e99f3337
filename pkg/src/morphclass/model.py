"""The label grid classification model shared by every trainer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import GridSpec, cell_of, cells_of


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class LabelGrid:
    """One predicted class id per grid cell.

    Classification is a single array access at the (clamped) cell of the
    query.  ``provenance`` records the trainer and its parameters.
    """

    spec: GridSpec
    labels: np.ndarray
    L: int
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.shape != self.spec.dims:
            raise ModelError(f"labels shape {labels.shape} != dims {self.spec.dims}")
        labels = labels.astype(np.int64, copy=True)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def covers(self) -> bool:
        """True when every cell holds a label in ``1..L``."""
        return bool(np.all((self.labels >= 1) & (self.labels <= self.L)))

    def partitions(self) -> list[np.ndarray]:
        """Boolean masks ``A_l`` of the cells labelled ``l``, for ``l = 1..L``."""
        return [self.labels == l for l in range(1, self.L + 1)]

    def classify(self, x) -> int:
        cell, _ = cell_of(x, self.spec)
        return int(self.labels[cell])

    def classify_many(self, X) -> np.ndarray:
        cells, _ = cells_of(X, self.spec)
        return self.labels[tuple(cells.T)]

    def __eq__(self, other):
        if not isinstance(other, LabelGrid):
            return NotImplemented
        return (self.spec == other.spec and self.L == other.L
                and np.array_equal(self.labels, other.labels))

    def __hash__(self):
        return hash((self.spec, self.L, self.labels.tobytes()))


def classify(model: LabelGrid, instance) -> int:
    return model.classify(instance)
