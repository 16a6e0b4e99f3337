"""Morphological Dilation Classifier.

Every training cell of a class other than the complement class ``q`` is a
seed.  All seeds dilate together, one distance shell per global iteration,
restricted to the cones enabled in ``beta``.  A seed stops for good once its
class counters show opposition (``tau * T_own < T_other``), when it hits
``sigma`` or when its class has accumulated ``t_err`` stopped seeds.  Cells
no seed claims form the complement partition of class ``q``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ._kernels import mdc_labels_at, mdc_owner, mdc_radii
from .distance import worst_case_steps
from .grid import CountGrid
from .model import LabelGrid, ModelError

LEFT, BOTTOM, RIGHT, TOP = 1, 2, 4, 8
ALL_DIRECTIONS = LEFT | BOTTOM | RIGHT | TOP
_LETTERS = {"L": LEFT, "B": BOTTOM, "R": RIGHT, "T": TOP}
AUTO = "auto"


def parse_beta(text) -> int:
    """``"RTB"`` -> mask.  Integers pass through."""
    if isinstance(text, (int, np.integer)):
        mask = int(text)
    else:
        text = str(text).strip().upper()
        if text.isdigit():
            mask = int(text)
        else:
            mask = 0
            for ch in text:
                if ch not in _LETTERS:
                    raise ModelError(f"unknown direction {ch!r}; use letters of LRTB")
                mask |= _LETTERS[ch]
    if not 0 <= mask <= ALL_DIRECTIONS:
        raise ModelError(f"beta mask out of range: {mask}")
    return mask


def format_beta(mask: int) -> str:
    return "".join(ch for ch in "LRTB" if mask & _LETTERS[ch])


def orientation_allows(offset, beta: int) -> bool:
    """Whether the enabled cones of ``beta`` contain ``offset``.

    y grows upwards.  Cones: left ``e1 <= -|e2|``, right ``e1 >= |e2|``,
    top ``e2 >= |e1|``, bottom ``e2 <= -|e1|``.
    """
    e1, e2 = int(offset[0]), int(offset[1])
    if e1 == 0 and e2 == 0:
        return True
    return bool((beta & LEFT and e1 <= -abs(e2))
                or (beta & RIGHT and e1 >= abs(e2))
                or (beta & TOP and e2 >= abs(e1))
                or (beta & BOTTOM and e2 <= -abs(e1)))


def allowed_mask(dx: np.ndarray, dy: np.ndarray, beta: int) -> np.ndarray:
    ax, ay = np.abs(dx), np.abs(dy)
    ok = (dx == 0) & (dy == 0)
    if beta & LEFT:
        ok |= dx <= -ay
    if beta & RIGHT:
        ok |= dx >= ay
    if beta & TOP:
        ok |= dy >= ax
    if beta & BOTTOM:
        ok |= dy <= -ax
    return ok


def inst_err(T, l: int, tau: float) -> int:
    """1 when some other class outweighs class ``l`` scaled by ``tau``."""
    T = np.asarray(T)
    own = tau * T[l - 1]
    others = np.delete(T, l - 1)
    return int(bool(np.any(own < others)))


def partition_err(seeds, tau: float) -> int:
    """Sum of :func:`inst_err` over ``(counters, class_id)`` pairs."""
    return sum(inst_err(T, l, tau) for T, l in seeds)


@dataclass(frozen=True)
class MDCParams:
    gamma: int = 1
    tau: float = 1.0
    beta: int = ALL_DIRECTIONS
    sigma: int | None = None
    q: int | str = AUTO
    t_err: int = 1

    def __post_init__(self):
        object.__setattr__(self, "beta", parse_beta(self.beta))
        if self.beta == 0:
            raise ModelError("beta needs at least one direction")
        if not self.tau > 0:
            raise ModelError("tau must be > 0")
        if self.gamma < 0:
            raise ModelError("gamma must be >= 0")
        if self.sigma is not None and self.sigma < 1:
            raise ModelError("sigma must be >= 1")
        if self.t_err < 0:
            raise ModelError("t_err must be >= 0")
        if self.q != AUTO and (not isinstance(self.q, (int, np.integer)) or self.q < 1):
            raise ModelError(f"q must be a class id or {AUTO!r}")


@dataclass(frozen=True)
class ExpansionState:
    """Outcome of the dilation for one complement choice.

    ``owner`` holds the claiming class per cell (0 = unclaimed, i.e. the
    complement), ``owner_seed`` the index of the claiming seed.
    """

    q: int
    seeds: np.ndarray        # (S, 3): x, y, class id
    owner: np.ndarray
    owner_seed: np.ndarray
    radius: np.ndarray       # last radius each seed claimed at, -1 if none
    counters: np.ndarray     # (S, L)
    violated: np.ndarray     # seeds stopped by opposition
    class_errors: np.ndarray  # partition error per class
    iterations: int

    def labels(self) -> np.ndarray:
        return np.where(self.owner == 0, self.q, self.owner)


def seeds_of(grid: CountGrid, q: int) -> np.ndarray:
    """Seed cells ordered by (class, linear cell index)."""
    rows = []
    flat = grid.counts.reshape(-1, grid.L)
    ny = grid.spec.dims[1]
    for c in range(1, grid.L + 1):
        if c == q:
            continue
        idx = np.flatnonzero(flat[:, c - 1] > 0)
        rows.append(np.column_stack([idx // ny, idx % ny, np.full(idx.size, c)]))
    if not rows:
        return np.zeros((0, 3), dtype=np.int64)
    return np.concatenate(rows).astype(np.int64)


def _radii(grid: CountGrid, params: MDCParams, seeds: np.ndarray):
    rmax = worst_case_steps(*grid.spec.dims)
    last = rmax if params.sigma is None else min(params.sigma - 1, rmax)
    sx, sy = np.ascontiguousarray(seeds[:, 0]), np.ascontiguousarray(seeds[:, 1])
    sc = np.ascontiguousarray(seeds[:, 2] - 1)
    out = mdc_radii(np.ascontiguousarray(grid.counts, dtype=np.int64), sx, sy, sc,
                    params.gamma, float(params.tau), params.t_err, last, params.beta)
    return (sx, sy, sc) + out


def _check(grid: CountGrid, q: int | None = None) -> None:
    if grid.spec.p != 2:
        raise ModelError(f"trainers work on 2-D grids, got p={grid.spec.p}")
    if grid.L < 2:
        raise ModelError("complement undefined for a single class")
    if q is not None and not 1 <= q <= grid.L:
        raise ModelError(f"q={q} outside 1..{grid.L}")


def expand(grid: CountGrid, params: MDCParams, q: int) -> ExpansionState:
    _check(grid, q)
    seeds = seeds_of(grid, q)
    sx, sy, sc, radius, T, violated, err, iters = _radii(grid, params, seeds)
    owner, owner_seed = mdc_owner(*grid.spec.dims, sx, sy, sc, radius, params.beta)
    return ExpansionState(q, seeds, owner, owner_seed, radius, T, violated, err, iters)


def training_accuracy(grid: CountGrid, labels: np.ndarray) -> float:
    """Share of the grid's instances whose cell carries their own class."""
    hit = np.take_along_axis(grid.counts, (labels - 1)[..., None], axis=-1)
    return float(hit.sum()) / grid.total


def complement_scores(grid: CountGrid, params: MDCParams) -> list[float]:
    return [training_accuracy(grid, expand(grid, params, q).labels())
            for q in range(1, grid.L + 1)]


def choose_complement(grid: CountGrid, params: MDCParams) -> int:
    """Complement class with the best training accuracy (smallest id on ties)."""
    return int(np.argmax(complement_scores(grid, params))) + 1


def train_mdc(grid: CountGrid, params: MDCParams = MDCParams()) -> LabelGrid:
    if grid.L < 2:
        raise ModelError("complement undefined for a single class")
    if grid.total == 0:
        raise ModelError("grid holds no training instances")
    if params.q == AUTO:
        states = [expand(grid, params, q) for q in range(1, grid.L + 1)]
        scores = [training_accuracy(grid, s.labels()) for s in states]
        state = states[int(np.argmax(scores))]
        q = state.q
    else:
        q = int(params.q)
        state = expand(grid, params, q)
    prov = {"trainer": "mdc", "mode": grid.mode, **asdict(params), "q": q,
            "iterations": state.iterations,
            "violations": int(state.violated.sum())}
    return LabelGrid(grid.spec, state.labels(), grid.L, prov)


def predict_at(grid: CountGrid, params: MDCParams, cells) -> np.ndarray:
    """Labels that ``train_mdc(grid, params)`` gives the ``(n, 2)`` cells.

    Only the queried cells and the instance cells (for the complement
    choice) are resolved, not the whole grid.
    """
    if grid.total == 0:
        raise ModelError("grid holds no training instances")
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    q = 0 if params.q == AUTO else int(params.q)
    _check(grid, q or None)
    rmax = worst_case_steps(*grid.spec.dims)
    last = rmax if params.sigma is None else min(params.sigma - 1, rmax)
    return mdc_labels_at(np.ascontiguousarray(grid.counts, dtype=np.int64),
                         np.ascontiguousarray(cells[:, 0]), np.ascontiguousarray(cells[:, 1]),
                         params.gamma, float(params.tau), params.t_err, last, params.beta, q)
