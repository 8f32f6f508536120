import csv

import numpy as np
import pytest

from htcan.cli import main
from htcan.imageio import read_png, write_png


def _write_pairs(d, rng, names=("a",), h=32, w=96):
    d.mkdir(parents=True, exist_ok=True)
    for n in names:
        for v in "LR":
            write_png(d / f"{n}_{v}.png", rng.random((1, 3, h, w)))


def test_init_weights_and_sr(tmp_path, rng, capsys):
    assert main(["init-weights", "--preset", "toy", "--seed", "0", "--noise", "0.05", "--out", str(tmp_path / "w")]) == 0
    cfg = tmp_path / "w" / "pipeline.json"
    assert cfg.exists() and (tmp_path / "w" / "toy_weights" / "stage3.htw").exists()
    _write_pairs(tmp_path / "lr", rng, h=12, w=12)
    args = ["sr", "--left", str(tmp_path / "lr/a_L.png"), "--right", str(tmp_path / "lr/a_R.png"),
            "--out-left", str(tmp_path / "o/L.png"), "--out-right", str(tmp_path / "o/R.png"), "--config", str(cfg)]
    assert main(args + ["--stages", "12", "--no-self-ensemble"]) == 0
    assert read_png(tmp_path / "o/L.png").shape == (1, 3, 48, 48)
    assert main(args + ["--stages", "1", "--trace"]) == 0
    assert "stage1.output" in capsys.readouterr().out


def test_degrade_and_eval(tmp_path, rng):
    _write_pairs(tmp_path / "gt", rng, names=("x", "y"), h=32, w=100)
    assert main(["degrade", "--in-dir", str(tmp_path / "gt"), "--out-dir", str(tmp_path / "lr"), "--scale", "4"]) == 0
    assert read_png(tmp_path / "lr" / "x_L.png").shape == (1, 3, 8, 25)
    report = tmp_path / "r.csv"
    assert main(["eval", "--sr-dir", str(tmp_path / "gt"), "--gt-dir", str(tmp_path / "gt"),
                 "--report", str(report)]) == 0
    rows = list(csv.DictReader(open(report)))
    assert [r["name"] for r in rows] == ["x", "y", "MEAN"]
    assert all(float(r["left_ssim"]) == 1.0 and float(r["pair_ssim"]) == 1.0 for r in rows)
    assert all(r["left_psnr"] == "inf" for r in rows)


def test_ensemble_command(tmp_path):
    write_png(tmp_path / "a.png", np.full((3, 4, 4), 7 / 255))
    write_png(tmp_path / "b.png", np.zeros((3, 4, 4)))
    assert main(["ensemble", "--inputs", str(tmp_path / "a.png"), str(tmp_path / "a.png"), str(tmp_path / "a.png"),
                 str(tmp_path / "b.png"), "--weights", "1/7", "1/7", "1/7", "4/7", "--out", str(tmp_path / "e.png")]) == 0
    assert np.all(np.round(read_png(tmp_path / "e.png", np.float64) * 255) == 3)
    assert main(["ensemble", "--inputs", str(tmp_path / "a.png"), "--weights", "0.5", "--out",
                 str(tmp_path / "f.png")]) == 1


def test_train_toy_command(tmp_path, capsys):
    assert main(["train-toy", "--stage", "1", "--iters", "6", "--seed", "0", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "stage1_trace.csv").read_text().splitlines()
    assert lines[0] == "iter,lr,loss" and len(lines) == 7
    assert (tmp_path / "stage1.htw").exists()


def test_selftest_command(capsys):
    assert main(["selftest"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["sr", "--bogus"])
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"stage1": {"members": []}}')
    args = ["sr", "--left", "l.png", "--right", "r.png", "--out-left", "a", "--out-right", "b", "--config"]
    assert main(args + [str(bad)]) == 1
    assert main(args + [str(tmp_path / "nope.json")]) == 2
    assert main(["eval", "--sr-dir", str(tmp_path / "x"), "--gt-dir", str(tmp_path)]) == 2
