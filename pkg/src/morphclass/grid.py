"""Datasets and their discretization onto integer grids.

A feature vector ``x`` lands in cell ``round(v * x) - origin`` where ``v`` is
the per-attribute precision vector.  Rounding is half away from zero.
"""
from __future__ import annotations

import csv
import hashlib
import logging
import math
import warnings
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

MULTISET = "multiset"
DEDUP = "dedup"
MODES = (MULTISET, DEDUP)

DEFAULT_PADDING = 2
DEFAULT_CELLS = 64


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass(frozen=True)
class Dataset:
    """Labelled instances; ``y`` holds class ids in ``1..L``.

    Duplicate rows are allowed (multiset semantics).
    """

    X: np.ndarray
    y: np.ndarray
    attribute_names: tuple[str, ...] = ()
    class_names: tuple[str, ...] = ()
    name: str = ""

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2:
            raise DataError("features must be a 2-D array (n, p)")
        if X.shape[1] < 1:
            raise DataError("instances need at least one feature")
        if y.shape != (X.shape[0],):
            raise DataError("one label per instance required")
        if len(y) and y.min() < 1:
            raise DataError("class ids start at 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if not self.attribute_names:
            names = tuple(f"a{j}" for j in range(X.shape[1]))
            object.__setattr__(self, "attribute_names", names)
        if len(self.attribute_names) != X.shape[1]:
            raise DataError("attribute_names length differs from feature count")
        if not self.class_names:
            L = int(y.max()) if len(y) else 0
            object.__setattr__(self, "class_names", tuple(str(c) for c in range(1, L + 1)))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def L(self) -> int:
        return len(self.class_names)

    def __len__(self):
        return self.n

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx], self.attribute_names,
                       self.class_names, self.name)

    def class_counts(self) -> np.ndarray:
        """Instances per class, index 0 is class 1."""
        return np.bincount(self.y, minlength=self.L + 1)[1:]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        return h.hexdigest()

    def validate(self) -> None:
        """Check the full invariants (every class populated, finite values)."""
        if self.n == 0:
            raise DataError("empty dataset")
        if not np.all(np.isfinite(self.X)):
            raise DataError("non-finite value")
        if self.y.max() > self.L:
            raise DataError("label outside 1..L")
        missing = [c + 1 for c, k in enumerate(self.class_counts()) if k == 0]
        if missing:
            raise DataError(f"classes without instances: {missing}")


@dataclass(frozen=True)
class GridSpec:
    """Maps feature space onto ``dims`` integer cells per axis."""

    precision: tuple[float, ...]
    origin: tuple[int, ...]
    dims: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.precision) == len(self.origin) == len(self.dims)):
            raise DataError("precision, origin and dims must share one length")
        if any(v <= 0 or not math.isfinite(v) for v in self.precision):
            raise DataError("precision entries must be positive and finite")
        if any(d < 1 for d in self.dims):
            raise DataError("every axis needs at least one cell")

    @property
    def p(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return math.prod(self.dims)


@dataclass
class CountGrid:
    """Per-cell, per-class instance counts.

    ``counts[..., l - 1]`` holds the number of class-``l`` instances in a cell.
    ``clamped`` is the number of instances that fell outside the grid and were
    moved to the nearest boundary cell.
    """

    spec: GridSpec
    counts: np.ndarray
    mode: str = MULTISET
    clamped: int = 0

    @property
    def L(self) -> int:
        return self.counts.shape[-1]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def totals(self) -> np.ndarray:
        """Instances per cell, all classes summed."""
        return self.counts.sum(axis=-1)

    def class_totals(self) -> np.ndarray:
        return self.counts.reshape(-1, self.L).sum(axis=0)


def round_half_away(a):
    a = np.asarray(a, dtype=float)
    return np.sign(a) * np.floor(np.abs(a) + 0.5)


def default_precision(dataset: Dataset, cells: int = DEFAULT_CELLS) -> tuple[float, ...]:
    """Precision making each axis span about ``cells`` cells.

    A constant attribute gets precision 1.
    """
    if dataset.n == 0:
        raise DataError("empty dataset")
    lo = dataset.X.min(axis=0)
    hi = dataset.X.max(axis=0)
    out = []
    for a, b in zip(lo, hi):
        span = float(b - a)
        out.append((cells - 1) / span if span > 0 else 1.0)
    return tuple(out)


def build_spec(dataset: Dataset, precision: Sequence[float] | None = None,
               padding: int = DEFAULT_PADDING) -> GridSpec:
    if dataset.n == 0:
        raise DataError("empty dataset")
    if not np.all(np.isfinite(dataset.X)):
        raise DataError("non-finite value")
    if padding < 0:
        raise DataError("padding must be >= 0")
    if precision is None:
        precision = default_precision(dataset)
    v = np.asarray(precision, dtype=float)
    if v.shape != (dataset.p,):
        raise DataError(f"precision needs {dataset.p} entries, got {v.size}")
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise DataError("precision entries must be positive")
    scaled = round_half_away(dataset.X * v)
    lo = scaled.min(axis=0).astype(np.int64)
    hi = scaled.max(axis=0).astype(np.int64)
    for j in np.flatnonzero(lo == hi):
        warnings.warn(f"attribute {dataset.attribute_names[j]!r} is constant; "
                      "degenerate grid axis", stacklevel=2)
    origin = tuple(int(a) - padding for a in lo)
    dims = tuple(int(b - a) + 1 + 2 * padding for a, b in zip(lo, hi))
    return GridSpec(tuple(float(x) for x in v), origin, dims)


def cells_of(X, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`cell_of`: returns ``(cells, clamped_mask)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != spec.p:
        raise DataError(f"expected {spec.p} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite value")
    raw = round_half_away(X * np.asarray(spec.precision)) - np.asarray(spec.origin)
    upper = np.asarray(spec.dims) - 1
    cells = np.clip(raw, 0, upper).astype(np.int64)
    clamped = np.any((raw < 0) | (raw > upper), axis=1)
    return cells, clamped


def cell_of(x, spec: GridSpec) -> tuple[tuple[int, ...], bool]:
    """Cell coordinates of one feature vector and whether it was clamped."""
    cells, clamped = cells_of(np.asarray(x, dtype=float).reshape(1, -1), spec)
    return tuple(int(c) for c in cells[0]), bool(clamped[0])


def discretize(dataset: Dataset, spec: GridSpec, mode: str = MULTISET) -> CountGrid:
    if mode not in MODES:
        raise DataError(f"mode must be one of {MODES}, got {mode!r}")
    L = dataset.L
    counts = np.zeros(spec.dims + (L,), dtype=np.int64)
    cells, clamped = cells_of(dataset.X, spec)
    index = tuple(cells.T) + (dataset.y - 1,)
    np.add.at(counts, index, 1)
    if mode == DEDUP:
        counts = np.minimum(counts, 1)
    n_clamped = int(clamped.sum())
    if n_clamped:
        log.warning("%d instances clamped onto the grid boundary", n_clamped)
    return CountGrid(spec, counts, mode, n_clamped)


def project(dataset: Dataset, axes: Sequence[int]) -> Dataset:
    """Keep only the attributes in ``axes`` (two distinct indices)."""
    axes = tuple(int(a) for a in axes)
    if len(axes) != 2 or axes[0] == axes[1]:
        raise DataError(f"need two distinct attribute indices, got {axes}")
    if any(a < 0 or a >= dataset.p for a in axes):
        raise DataError(f"attribute index out of range 0..{dataset.p - 1}: {axes}")
    return Dataset(dataset.X[:, axes], dataset.y,
                   tuple(dataset.attribute_names[a] for a in axes),
                   dataset.class_names, dataset.name)


def axis_pairs(p: int) -> list[tuple[int, int]]:
    return list(combinations(range(p), 2))


# -- loaders ---------------------------------------------------------------

def _class_ids(labels: Sequence[str], declared: Sequence[str] | None = None):
    names = list(declared) if declared else []
    for lab in labels:
        if lab not in names:
            if declared:
                raise DataError(f"class {lab!r} not declared")
            names.append(lab)
    lookup = {c: i + 1 for i, c in enumerate(names)}
    return np.array([lookup[lab] for lab in labels], dtype=np.int64), tuple(names)


def load_csv(path, name: str | None = None) -> Dataset:
    """CSV with a header row; the last column is the class label."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise DataError(f"{path}: no data rows")
    header, body = rows[0], rows[1:]
    feats, labels = [], []
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields")
        try:
            feats.append([float(c) for c in row[:-1]])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        labels.append(row[-1].strip())
    y, classes = _class_ids(labels)
    return Dataset(np.array(feats, dtype=float), y,
                   tuple(h.strip() for h in header[:-1]), classes,
                   name or path.stem)


def _arff_nominal(spec: str) -> list[str]:
    inner = spec[spec.index("{") + 1:spec.rindex("}")]
    return [t.strip().strip("'\"") for t in inner.split(",")]


def load_arff(path, name: str | None = None) -> Dataset:
    """Numeric attributes plus one nominal class attribute (the last one)."""
    path = Path(path)
    attrs: list[tuple[str, str]] = []
    feats, labels = [], []
    in_data = False
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("%"):
                continue
            if not in_data:
                low = line.lower()
                if low.startswith("@attribute"):
                    rest = line.split(None, 1)[1]
                    if rest.startswith(("'", '"')):
                        q = rest[0]
                        end = rest.index(q, 1)
                        aname, atype = rest[1:end], rest[end + 1:].strip()
                    else:
                        aname, atype = rest.split(None, 1)
                    attrs.append((aname, atype.strip()))
                elif low.startswith("@data"):
                    in_data = True
                continue
            fields = [t.strip() for t in line.split(",")]
            if len(fields) != len(attrs):
                raise DataError(f"{path}:{lineno}: expected {len(attrs)} fields")
            try:
                feats.append([float(t) for t in fields[:-1]])
            except ValueError:
                raise DataError(f"{path}:{lineno}: only numeric features are "
                                "supported") from None
            labels.append(fields[-1].strip("'\""))
    if not attrs or not attrs[-1][1].startswith("{"):
        raise DataError(f"{path}: last attribute must be nominal")
    for aname, atype in attrs[:-1]:
        if atype.lower() not in ("numeric", "real", "integer"):
            raise DataError(f"{path}: attribute {aname!r} is not numeric")
    y, classes = _class_ids(labels, _arff_nominal(attrs[-1][1]))
    return Dataset(np.array(feats, dtype=float).reshape(len(labels), len(attrs) - 1),
                   y, tuple(a for a, _ in attrs[:-1]), classes, name or path.stem)


def load(path, name: str | None = None) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix.lower() == ".arff":
        return load_arff(path, name)
    return load_csv(path, name)


def write_csv(dataset: Dataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(dataset.attribute_names) + ["class"])
        for x, c in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in x] + [dataset.class_names[c - 1]])
