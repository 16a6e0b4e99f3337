"""Morphological k-NN.

Every grid cell absorbs whole distance shells (shell 0 is the cell itself)
until at least ``k`` training instances have been seen or the shell index
passes ``sigma``; it then takes the class with the largest counter.  The
cell's own instances are pre-weighted by ``gamma``; that weight enters the
class counters but not the instance tally compared against ``k``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ._kernels import mknn_sweep, mknn_sweep_at
from .distance import offset_table, worst_case_steps
from .grid import CountGrid
from .model import LabelGrid, ModelError, classify  # noqa: F401  (re-export)


@dataclass(frozen=True)
class MkNNParams:
    k: int = 3
    gamma: int = 1
    sigma: int | None = None  # None: never truncate

    def __post_init__(self):
        if self.k < 1:
            raise ModelError("k must be >= 1")
        if self.gamma < 0:
            raise ModelError("gamma must be >= 0")
        if self.sigma is not None and self.sigma < 1:
            raise ModelError("sigma must be >= 1")


@dataclass(frozen=True)
class Absorption:
    """Per-cell result of the shell sweep."""

    counters: np.ndarray  # (x, y, L) class counters T
    radius: np.ndarray    # last absorbed shell index
    reached: np.ndarray   # k instances seen before the sigma cut-off

    @property
    def converged(self) -> bool:
        return bool(self.reached.all())


def _check_grid(grid: CountGrid):
    if grid.spec.p != 2:
        raise ModelError(f"trainers work on 2-D grids, got p={grid.spec.p}")
    if grid.total == 0:
        raise ModelError("grid holds no training instances")


def max_radius(grid: CountGrid) -> int:
    return worst_case_steps(*grid.spec.dims)


def absorb(grid: CountGrid, params: MkNNParams) -> Absorption:
    _check_grid(grid)
    rmax = max_radius(grid)
    sigma = rmax if params.sigma is None else min(params.sigma, rmax)
    odx, ody, ostart = offset_table(rmax)
    T, radius, reached = mknn_sweep(np.ascontiguousarray(grid.counts, dtype=np.int64),
                                    params.k, params.gamma, sigma, odx, ody, ostart)
    return Absorption(T, radius, reached)


def counters_at(grid: CountGrid, params: MkNNParams, cells: np.ndarray) -> np.ndarray:
    """Class counters for the given ``(n, 2)`` cells without sweeping the grid."""
    _check_grid(grid)
    rmax = max_radius(grid)
    sigma = rmax if params.sigma is None else min(params.sigma, rmax)
    odx, ody, ostart = offset_table(rmax)
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    return mknn_sweep_at(np.ascontiguousarray(grid.counts, dtype=np.int64),
                         np.ascontiguousarray(cells[:, 0]), np.ascontiguousarray(cells[:, 1]),
                         params.k, params.gamma, sigma, odx, ody, ostart)


def majority_class(class_totals) -> int:
    """Most frequent class id, smallest id on ties."""
    return int(np.argmax(class_totals)) + 1


def labels_from_counters(T: np.ndarray, fallback: int) -> np.ndarray:
    labels = np.argmax(T, axis=-1) + 1
    labels[T.sum(axis=-1) == 0] = fallback
    return labels


def binary_labels(T: np.ndarray, target: int, fallback: int) -> np.ndarray:
    """Labels of the ``target``-versus-rest problem from multi-class counters.

    In-class is label 1, out-of-class label 2.  Valid because the shell sweep
    does not depend on labels, only the counters do.
    """
    inside = T[..., target - 1]
    outside = T.sum(axis=-1) - inside
    labels = np.where(inside >= outside, 1, 2)
    labels[(inside == 0) & (outside == 0)] = fallback
    return labels


def train_mknn(grid: CountGrid, params: MkNNParams = MkNNParams()) -> LabelGrid:
    state = absorb(grid, params)
    fallback = majority_class(grid.class_totals())
    labels = labels_from_counters(state.counters, fallback)
    prov = {"trainer": "mknn", "mode": grid.mode, **asdict(params),
            "converged": state.converged,
            "iterations": int(state.radius.max()) + 1}
    return LabelGrid(grid.spec, labels, grid.L, prov)


def convergence_reached(grid: CountGrid, k: int, sigma: int | None = None) -> bool:
    """True when every cell saw ``k`` instances within the allowed shells."""
    if grid.total < k:
        return False
    return absorb(grid, MkNNParams(k=k, gamma=0, sigma=sigma)).converged
