"""``morphclass`` command line tool.

Subcommands: train, predict, crossval, tune, compress, render.  Options may
also come from a ``key = value`` file given with ``--config``; flags win.
Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .compress import CODECS, CodecError, dumps_model, loads_model, save_model
from .config import TrainerConfig
from .datasets import BUILTIN, load_builtin
from .ensemble import (EnsembleConfig, MultiLabelModel, dumps_manifest, loads_manifest,
                       save_manifest)
from .evaluation import format_table, kfold, run_experiment, to_csv
from .grid import MODES, MULTISET, DataError, Dataset, cells_of, load
from .mdc import AUTO, MDCParams, parse_beta
from .mknn import MkNNParams, convergence_reached
from .model import LabelGrid, ModelError
from .tune import TuneError, config_lines, tune_config

log = logging.getLogger("morphclass")

ALGOS = ("mknn", "mdc", "ensemble-mknn", "ensemble-mdc")
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    algo: str = "mknn"
    mode: str = MULTISET
    data: str | None = None
    out: str | None = None
    model: str | None = None
    seed: int = 0
    k: int = 3
    gamma: int = 1
    tau: float = 1.0
    beta: str = "LRTB"
    sigma: int | None = None
    terr: int = 1
    q: str = AUTO
    topn: int | None = None
    cells: int = 64
    precision: str | None = None
    padding: int = 2
    codec: str = "raw"
    folds: int = 10
    generations: int = 500
    scale: int = 1

    def trainer(self) -> TrainerConfig:
        algo = self.algo.removeprefix("ensemble-")
        precision = None
        if self.precision:
            precision = tuple(float(v) for v in self.precision.replace(",", " ").split())
        q = AUTO if str(self.q) == AUTO else int(self.q)
        return TrainerConfig(
            algo=algo, mode=self.mode,
            mknn=MkNNParams(k=self.k, gamma=self.gamma, sigma=self.sigma),
            mdc=MDCParams(gamma=self.gamma, tau=self.tau, beta=parse_beta(self.beta),
                          sigma=self.sigma, q=q, t_err=self.terr),
            cells=self.cells, precision=precision, padding=self.padding)

    @property
    def is_ensemble(self) -> bool:
        return self.algo.startswith("ensemble-")

    def learner(self):
        if self.is_ensemble:
            return EnsembleConfig(self.trainer(), top_n=self.topn, folds=self.folds,
                                  seed=self.seed)
        return self.trainer()


_TYPES = {f.name: f.type for f in fields(RunConfig)}
_INT = {"seed", "k", "gamma", "sigma", "terr", "topn", "cells", "padding", "folds",
        "generations", "scale"}


def _coerce(key: str, value: str):
    if value.lower() in ("none", ""):
        return None
    if key in _INT:
        return int(value)
    if key == "tau":
        return float(value)
    return value


def read_config_file(path) -> dict:
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError:
            raise UsageError(f"{path}:{n}: bad value for {key}: {value!r}") from None
    return out


def resolve(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        if not Path(args.config).exists():
            raise FileNotFoundError(args.config)
        values.update(read_config_file(args.config))
    for key in _TYPES:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    cfg = RunConfig(**values)
    if cfg.algo not in ALGOS:
        raise UsageError(f"unknown algo {cfg.algo!r}; choose from {ALGOS}")
    if cfg.mode not in MODES:
        raise UsageError(f"unknown mode {cfg.mode!r}")
    if cfg.codec not in CODECS:
        raise UsageError(f"unknown codec {cfg.codec!r}; choose from {CODECS}")
    return cfg


def load_data(spec: str | None) -> Dataset:
    if not spec:
        raise UsageError("--data is required")
    if spec in BUILTIN and not Path(spec).exists():
        return load_builtin(spec)
    return load(spec)


def load_any_model(path: str):
    if not path:
        raise UsageError("--model is required")
    text = Path(path).read_text(encoding="ascii")
    if text.startswith("MCENSEMBLE"):
        return loads_manifest(text)
    return loads_model(text)


def read_features(path: str, p: int) -> np.ndarray:
    """Instances from a dataset file; a trailing label column is ignored."""
    if path in BUILTIN and not Path(path).exists():
        X = load_builtin(path).X
    elif Path(path).suffix.lower() == ".arff":
        X = load(path).X
    else:
        rows = []
        with open(path, newline="") as fh:
            for n, row in enumerate(csv.reader(fh)):
                row = [c.strip() for c in row]
                if not row or not any(row):
                    continue
                try:
                    rows.append([float(c) for c in row[:p]] + row[p:])
                except ValueError:
                    if n == 0:
                        continue  # header
                    raise DataError(f"{path}:{n + 1}: non-numeric attribute") from None
        if not rows:
            raise DataError(f"{path}: no instances")
        widths = {len(r) for r in rows}
        if widths - {p, p + 1}:
            raise DataError(f"expected p={p} attributes (plus an optional label), "
                            f"got rows of width {sorted(widths)}")
        X = np.array([r[:p] for r in rows], dtype=float)
    if X.shape[1] != p:
        raise DataError(f"model expects p={p} attributes, data has {X.shape[1]}")
    return X


# -- subcommands -----------------------------------------------------------

def cmd_train(cfg: RunConfig, out=sys.stdout) -> int:
    ds = load_data(cfg.data)
    if not cfg.out:
        raise UsageError("--out is required")
    learner = cfg.learner()
    if cfg.is_ensemble:
        model = learner.fit(ds)
        nbytes = save_manifest(model, cfg.out)
        for b in model.binaries:
            print(f"binary {b.target_class}: cv accuracy {100 * b.cv_accuracy:.1f}% "
                  f"top_n {b.top_n} invert {int(b.invert)}", file=out)
        print(f"fallback {model.fallback}", file=out)
    else:
        if ds.p != 2:
            raise DataError(f"{cfg.algo} trains on 2 attributes, data has {ds.p}; "
                            "use an ensemble algorithm")
        grid = learner.grid_for(ds)
        model = learner.train(grid)
        nbytes = save_model(model, cfg.out, cfg.codec)
        prov = model.provenance
        print(f"coverage {100.0 * model.covers():.1f}%", file=out)
        if learner.algo == "mknn":
            conv = convergence_reached(grid, learner.mknn.k, learner.mknn.sigma)
            print(f"convergence_reached {str(conv).lower()}", file=out)
        else:
            print(f"complement {prov['q']}", file=out)
            print(f"violations {prov['violations']}", file=out)
        print(f"iterations {prov['iterations']}", file=out)
        print(f"dims {model.spec.dims[0]} {model.spec.dims[1]}", file=out)
    print(f"wrote {cfg.out} ({nbytes} bytes)", file=out)
    return EXIT_OK


def cmd_predict(cfg: RunConfig, out=sys.stdout) -> int:
    model = load_any_model(cfg.model)
    p = model.p if isinstance(model, MultiLabelModel) else model.spec.p
    if not cfg.data:
        raise UsageError("--data is required")
    X = read_features(cfg.data, p)
    labels = model.classify_many(X)
    out.write("".join(f"{int(v)}\n" for v in labels))
    return EXIT_OK


def cmd_crossval(cfg: RunConfig, out=sys.stdout) -> int:
    ds = load_data(cfg.data)
    learner = cfg.learner()
    if not cfg.is_ensemble and ds.p != 2:
        raise DataError(f"{cfg.algo} needs 2 attributes, data has {ds.p}")
    result = run_experiment(ds, learner, kfold(ds, cfg.folds, cfg.seed))
    print(result.row(), file=out)
    if cfg.out:
        Path(cfg.out).write_text(to_csv([result]))
    else:
        log.info("\n%s", format_table([result]))
    return EXIT_OK


def cmd_tune(cfg: RunConfig, out=sys.stdout) -> int:
    ds = load_data(cfg.data)
    learner = cfg.learner()
    if not cfg.is_ensemble and ds.p != 2:
        raise DataError(f"{cfg.algo} needs 2 attributes, data has {ds.p}")
    tuned, result = tune_config(ds, learner, generations=cfg.generations, seed=cfg.seed,
                                folds=cfg.folds)
    lines = [f"# tuned on {ds.name}: {result.generations} generations, "
             f"cv accuracy {result.best.fitness:.6f}"] + config_lines(tuned)
    text = "\n".join(lines) + "\n"
    if cfg.out:
        Path(cfg.out).write_text(text)
        Path(cfg.out).with_suffix(".log").write_text(result.report())
        print(f"best cv accuracy {100 * result.best.fitness:.2f}%; wrote {cfg.out}", file=out)
    else:
        out.write(result.report())
        out.write(text)
    return EXIT_OK


def cmd_compress(cfg: RunConfig, out=sys.stdout) -> int:
    if not cfg.model:
        raise UsageError("--model is required")
    src = Path(cfg.model).read_text(encoding="ascii")
    if src.startswith("MCENSEMBLE"):
        text = dumps_manifest(loads_manifest(src), "rle" if cfg.codec == "raw" else cfg.codec)
    else:
        text = dumps_model(loads_model(src), cfg.codec)
    if cfg.out:
        Path(cfg.out).write_text(text, encoding="ascii")
    else:
        out.write(text)
    print(f"{len(src.encode())} bytes -> {cfg.codec} {len(text.encode())} bytes",
          file=sys.stderr if not cfg.out else out)
    return EXIT_OK


def gray_levels(labels: np.ndarray, L: int) -> np.ndarray:
    return (255 * (labels - 1)) // max(L - 1, 1)


def render_pgm(model: LabelGrid, data: Dataset | None = None, scale: int = 1) -> bytes:
    """8-bit PGM, y growing upwards.  Training instances are drawn in
    whichever extreme gray contrasts with the cell underneath."""
    img = gray_levels(model.labels, model.L).astype(np.uint8)  # indexed [x, y]
    if data is not None:
        cells, _ = cells_of(data.X, model.spec)
        cx, cy = cells[:, 0], cells[:, 1]
        img[cx, cy] = np.where(img[cx, cy] < 128, 255, 0)
    pix = np.flipud(img.T)
    if scale > 1:
        pix = np.kron(pix, np.ones((scale, scale), dtype=np.uint8))
    h, w = pix.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()


def cmd_render(cfg: RunConfig, out=sys.stdout) -> int:
    model = load_any_model(cfg.model)
    if not isinstance(model, LabelGrid):
        raise DataError("render needs a 2-D model, not an ensemble manifest")
    if not cfg.out:
        raise UsageError("--out is required")
    data = load_data(cfg.data) if cfg.data else None
    Path(cfg.out).write_bytes(render_pgm(model, data, max(1, cfg.scale)))
    print(f"wrote {cfg.out}", file=out)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "crossval": cmd_crossval,
            "tune": cmd_tune, "compress": cmd_compress, "render": cmd_render}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    add = common.add_argument
    add("--config", help="key = value file; flags override it")
    add("--algo", choices=ALGOS)
    add("--mode", choices=MODES)
    add("--data", help="CSV/ARFF file or built-in name (" + ", ".join(BUILTIN) + ")")
    add("--out")
    add("--model", help="model container or ensemble manifest")
    add("--seed", type=int)
    add("--k", type=int)
    add("--gamma", type=int)
    add("--tau", type=float)
    add("--beta", help="subset of LRTB")
    add("--sigma", type=int)
    add("--terr", type=int)
    add("--q", help=f"complement class id or {AUTO}")
    add("--topn", type=int)
    add("--cells", type=int, help="cells per axis when --precision is not given")
    add("--precision", help="comma separated precision vector")
    add("--padding", type=int)
    add("--codec", choices=CODECS)
    add("--folds", type=int)
    add("--generations", type=int)
    add("--scale", type=int, help="render: pixels per cell")
    add("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="morphclass", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg, sys.stdout)
    except FileNotFoundError as exc:
        print(f"morphclass: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, DataError) as exc:
        print(f"morphclass: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, CodecError, TuneError, ValueError) as exc:
        print(f"morphclass: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
