"""Bundled UCI datasets and the reduced variants used in the experiments."""
from __future__ import annotations

from importlib import resources

import numpy as np

from .grid import Dataset, load_arff, project

_FILES = {"iris": "iris.arff", "diabetes": "diabetes.arff", "haberman": "haberman.arff"}


def _bundled(stem: str) -> Dataset:
    ref = resources.files("morphclass") / "data" / _FILES[stem]
    with resources.as_file(ref) as path:
        return load_arff(path, name=stem)


def iris() -> Dataset:
    return _bundled("iris")


def iris2d() -> Dataset:
    """Iris without Iris-setosa, keeping sepallength and petallength."""
    full = iris()
    keep = full.y != 1
    ds = project(full.subset(np.flatnonzero(keep)), (0, 2))
    return Dataset(ds.X, ds.y - 1, ds.attribute_names, full.class_names[1:], "iris2d")


def diabetes() -> Dataset:
    return _bundled("diabetes")


def diabetes2d() -> Dataset:
    """Diabetes reduced to plas and insu."""
    full = diabetes()
    ds = project(full, (full.attribute_names.index("plas"),
                        full.attribute_names.index("insu")))
    return Dataset(ds.X, ds.y, ds.attribute_names, ds.class_names, "diabetes2d")


def haberman() -> Dataset:
    return _bundled("haberman")


BUILTIN = {
    "iris": iris,
    "iris2d": iris2d,
    "diabetes": diabetes,
    "diabetes2d": diabetes2d,
    "haberman": haberman,
}


def load_builtin(name: str) -> Dataset:
    try:
        return BUILTIN[name]()
    except KeyError:
        raise KeyError(f"unknown builtin dataset {name!r}; "
                       f"choose from {sorted(BUILTIN)}") from None
