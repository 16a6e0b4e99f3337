import re

import numpy as np
import pytest

from morphclass.cli import main, read_config_file, render_pgm
from morphclass.compress import load_model
from morphclass.config import TrainerConfig
from morphclass.datasets import iris2d
from morphclass.ensemble import load_manifest
from morphclass.grid import DEDUP, write_csv
from morphclass.mdc import MDCParams, parse_beta


@pytest.fixture
def iris_csv(tmp_path):
    path = tmp_path / "iris2d.csv"
    write_csv(iris2d(), path)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_train_then_predict(tmp_path, iris_csv, capsys):
    model_path = tmp_path / "m.mc"
    code, out, _ = run(capsys, "train", "--algo", "mknn", "--mode", "dedup", "--data", iris_csv,
                       "--k", 3, "--cells", 31, "--out", model_path)
    assert code == 0
    assert "coverage 100.0%" in out and "convergence_reached true" in out
    model = load_model(model_path)
    code, out, _ = run(capsys, "predict", "--model", model_path, "--data", iris_csv)
    assert code == 0
    got = np.array(out.split(), dtype=int)
    assert np.array_equal(got, model.classify_many(iris2d().X))
    direct = TrainerConfig("mknn", DEDUP, cells=31).with_params(k=3).fit(iris2d())
    assert direct == model


def test_mdc_beta_flag(tmp_path, capsys):
    model_path = tmp_path / "mdc.mc"
    code, out, _ = run(capsys, "train", "--algo", "mdc", "--data", "iris2d", "--beta", "RTB",
                       "--terr", 4, "--cells", 24, "--out", model_path)
    assert code == 0 and re.search(r"^complement [12]$", out, re.M)
    cfg = TrainerConfig("mdc", cells=24, mdc=MDCParams(beta=parse_beta("RTB"), t_err=4))
    assert load_model(model_path) == cfg.fit(iris2d())


def test_ensemble_train_and_predict(tmp_path, capsys):
    path = tmp_path / "e.mce"
    code, out, _ = run(capsys, "train", "--algo", "ensemble-mknn", "--data", "iris",
                       "--k", 5, "--cells", 20, "--topn", 3, "--out", path)
    assert code == 0 and out.count("binary ") == 3
    model = load_manifest(path)
    code, out, _ = run(capsys, "predict", "--model", path, "--data", "iris")
    assert len(out.split()) == 150 and set(out.split()) <= {"1", "2", "3"}
    assert model.binaries[0].top_n == 3


def test_predict_rejects_wrong_width(tmp_path, capsys):
    model_path = tmp_path / "m.mc"
    run(capsys, "train", "--data", "iris2d", "--out", model_path)
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2,3,4\n")
    code, _, err = run(capsys, "predict", "--model", model_path, "--data", bad)
    assert code == 2 and "p=2" in err


@pytest.mark.parametrize("argv", [
    ["train", "--data", "nope.csv", "--out", "x.mc"],
    ["predict", "--model", "missing.mc", "--data", "iris2d"],
])
def test_missing_files_exit_2(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, _, err = run(capsys, *argv)
    assert code == 2 and "not found" in err


def test_usage_errors(capsys, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--algo", "svm"])
    assert exc.value.code == 2
    code, _, err = run(capsys, "train", "--out", tmp_path / "x.mc")
    assert code == 2 and "--data" in err
    code, _, _ = run(capsys, "crossval", "--algo", "mknn", "--data", "iris")
    assert code == 2


def test_bad_model_exits_1(tmp_path, capsys):
    path = tmp_path / "junk.mc"
    path.write_text("MCMODEL 1\ndims 2\n")
    code, _, _ = run(capsys, "predict", "--model", path, "--data", "iris2d")
    assert code == 1


def test_compress_round_trip(tmp_path, capsys):
    raw = tmp_path / "m.mc"
    run(capsys, "train", "--data", "iris2d", "--out", raw)
    for codec in ("rle", "tree", "rect"):
        packed = tmp_path / f"m.{codec}"
        back = tmp_path / f"back.{codec}.mc"
        code, out, _ = run(capsys, "compress", "--model", raw, "--codec", codec, "--out", packed)
        assert code == 0 and re.match(r"\d+ bytes -> \w+ \d+ bytes", out)
        assert len(packed.read_bytes()) < len(raw.read_bytes())
        run(capsys, "compress", "--model", packed, "--codec", "raw", "--out", back)
        assert back.read_bytes() == raw.read_bytes()


def test_render_pgm(tmp_path, capsys):
    model_path = tmp_path / "m.mc"
    run(capsys, "train", "--data", "iris2d", "--out", model_path)
    model = load_model(model_path)
    img = tmp_path / "m.pgm"
    code, _, _ = run(capsys, "render", "--model", model_path, "--data", "iris2d",
                     "--scale", 3, "--out", img)
    assert code == 0
    data = img.read_bytes()
    nx, ny = model.spec.dims
    header = f"P5\n{3 * nx} {3 * ny}\n255\n".encode()
    assert data.startswith(header) and len(data) == len(header) + 9 * nx * ny
    plain = render_pgm(model)
    pix = np.frombuffer(plain[len(f"P5\n{nx} {ny}\n255\n"):], np.uint8).reshape(ny, nx)
    # bottom-left pixel is cell (0, 0)
    assert pix[-1, 0] == 255 * (model.labels[0, 0] - 1)


def test_crossval_row_and_csv(tmp_path, capsys):
    csv_path = tmp_path / "r.csv"
    code, out, _ = run(capsys, "crossval", "--data", "iris2d", "--mode", "dedup",
                       "--folds", 5, "--out", csv_path)
    assert code == 0
    assert re.fullmatch(r"MkNN iris2d \d+\.\d \d+\.\d \d+\.\d\n", out)
    assert csv_path.read_text().startswith("classifier,dataset,acc,tp,tn,train_s,test_s\n")


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# trained by hand\nalgo = mknn\nmode = dedup\nk = 7  # neighbours\n"
                   "cells = 30\n")
    assert read_config_file(cfg) == {"algo": "mknn", "mode": "dedup", "k": 7, "cells": 30}
    a, b = tmp_path / "a.mc", tmp_path / "b.mc"
    run(capsys, "train", "--config", cfg, "--data", "iris2d", "--out", a)
    run(capsys, "train", "--config", cfg, "--k", 1, "--data", "iris2d", "--out", b)
    fit = TrainerConfig("mknn", DEDUP, cells=30).with_params
    assert load_model(a) == fit(k=7).fit(iris2d())
    assert load_model(b) == fit(k=1).fit(iris2d())
    cfg.write_text("colour = blue\n")
    code, _, err = run(capsys, "train", "--config", cfg, "--data", "iris2d", "--out", a)
    assert code == 2 and "colour" in err


def test_tune_writes_loadable_config(tmp_path, capsys):
    out_cfg = tmp_path / "best.cfg"
    code, out, _ = run(capsys, "tune", "--data", "iris2d", "--generations", 3, "--folds", 5,
                       "--seed", 1, "--out", out_cfg)
    assert code == 0 and "best cv accuracy" in out
    assert out_cfg.with_suffix(".log").read_text().count("\n") == 4
    code, _, _ = run(capsys, "crossval", "--config", out_cfg, "--data", "iris2d", "--folds", 5)
    assert code == 0
