"""Iterative 2-D distance and the cell shells it induces.

``dt`` orders neighbours in a staircase: along the dominant axis ``n`` it
starts at the triangular number ``n(n+1)/2`` and the minor offset is added on
top.  A shell (all offsets with the same ``dt``) holds at most eight cells.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np


def sum_progression(n: int) -> int:
    """``1 + 2 + ... + n``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return n * (1 + n) // 2


def dt_offset(dx: int, dy: int) -> int:
    xm, ym = abs(dx), abs(dy)
    if xm > ym:
        return xm * (1 + xm) // 2 + ym
    return ym * (1 + ym) // 2 + xm


def dt(v, w) -> int:
    """Iterative distance between two integer points."""
    return dt_offset(v[0] - w[0], v[1] - w[1])


def dt_array(dx, dy):
    """Element-wise ``dt`` for integer offset arrays."""
    xm = np.abs(np.asarray(dx, dtype=np.int64))
    ym = np.abs(np.asarray(dy, dtype=np.int64))
    return np.where(xm > ym, xm * (1 + xm) // 2 + ym, ym * (1 + ym) // 2 + xm)


def worst_case_steps(x_t: int, y_t: int) -> int:
    """Shells needed for one cell to reach every cell of an ``x_t`` by ``y_t`` grid."""
    if x_t < 1 or y_t < 1:
        raise ValueError("grid dimensions must be >= 1")
    if y_t >= x_t:
        return (y_t * y_t - y_t) // 2 + x_t - 1
    return (x_t * x_t - x_t) // 2 + y_t - 1


def _quadrant(dx: int, dy: int) -> int:
    # half-open quadrants so that every axis cell belongs to exactly one
    if dx > 0 and dy >= 0:
        return 0
    if dx <= 0 and dy > 0:
        return 1
    if dx < 0 and dy <= 0:
        return 2
    return 3


def _triangular_root(r: int) -> int:
    """Largest ``n`` with ``n(n+1)/2 <= r``."""
    n = (math.isqrt(8 * r + 1) - 1) // 2
    while sum_progression(n + 1) <= r:
        n += 1
    while sum_progression(n) > r:
        n -= 1
    return n


@lru_cache(maxsize=4096)
def ring_offsets(i: int) -> tuple[tuple[int, int], ...]:
    """All offsets at distance exactly ``i``, in canonical visiting order.

    Quadrants come in the order +x+y, -x+y, -x-y, +x-y; inside a quadrant
    offsets ascend by ``|dy|`` then ``|dx|``.
    """
    if i < 0:
        raise ValueError("ring index must be non-negative")
    if i == 0:
        return ((0, 0),)
    n = _triangular_root(i)
    m = i - sum_progression(n)
    mags = [(m, n)]
    if m < n:
        mags.append((n, m))
    found = set()
    for a, b in mags:
        for sx in (1, -1):
            for sy in (1, -1):
                found.add((sx * a, sy * b))
    return tuple(sorted(found, key=lambda o: (_quadrant(*o), abs(o[1]), abs(o[0]))))


def ring(center, i: int, bounds=None) -> list[tuple[int, int]]:
    """In-bounds cells at distance exactly ``i`` from ``center``.

    ``bounds`` is the grid ``dims``; ``None`` means an unbounded plane.
    """
    cx, cy = int(center[0]), int(center[1])
    out = []
    for dx, dy in ring_offsets(i):
        x, y = cx + dx, cy + dy
        if bounds is not None and not (0 <= x < bounds[0] and 0 <= y < bounds[1]):
            continue
        out.append((x, y))
    return out


@lru_cache(maxsize=64)
def offset_table(max_radius: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Concatenated shells ``0..max_radius`` for the training kernels.

    Returns ``(dx, dy, start)``; shell ``r`` occupies ``start[r]:start[r+1]``.
    """
    dxs, dys = [], []
    start = np.zeros(max_radius + 2, dtype=np.int64)
    for r in range(max_radius + 1):
        offs = ring_offsets(r)
        start[r + 1] = start[r] + len(offs)
        for dx, dy in offs:
            dxs.append(dx)
            dys.append(dy)
    dx = np.array(dxs, dtype=np.int64)
    dy = np.array(dys, dtype=np.int64)
    for a in (dx, dy, start):
        a.setflags(write=False)
    return dx, dy, start
