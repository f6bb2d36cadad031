import re

import numpy as np
import pytest

from dffn.cli import cli
from dffn.imageio import read_image, write_image

SMALL = '{"net": {"base_channels": 4, "level_channels": [4, 8], "blocks_per_level": [2, 1]}, ' \
        '"train": {"batch": 2, "crop": 16, "lr_init": 0.001}}'


def test_unknown_subcommand(capsys):
    assert cli(["frobnicate"]) != 0
    assert "usage" in capsys.readouterr().err


def test_unknown_flag(capsys):
    assert cli(["params", "--bogus"]) != 0
    assert "usage" in capsys.readouterr().err


def test_params_default_total(capsys):
    assert cli(["params"]) == 0
    out = capsys.readouterr().out
    total = int(re.search(r"^total\s+([\d,]+)", out, re.M).group(1).replace(",", ""))
    assert 1.93e6 <= total <= 3.22e6
    assert total == 2_574_046


def test_swap_demo_self(tmp_path, rng, capsys):
    img = rng.random((3, 16, 16))
    write_image(tmp_path / "a.png", img)
    assert cli(["swap-demo", "--image-a", str(tmp_path / "a.png"), "--image-b", str(tmp_path / "a.png"),
                "--out-dir", str(tmp_path / "o")]) == 0
    src = read_image(tmp_path / "a.png")
    for name in ("amp_a_phase_b.png", "amp_b_phase_a.png"):
        assert np.abs(read_image(tmp_path / "o" / name) - src).max() <= 1 / 510 + 1e-7
    line = capsys.readouterr().out
    assert "mean_a=" in line and "dc_amp_a_phase_b=" in line


def test_gradcheck_subset(capsys):
    assert cli(["gradcheck", "--only", "conv2d,phase,IAM"]) == 0
    assert "3/3 checks passed" in capsys.readouterr().out


def test_gradcheck_unknown_name():
    assert cli(["gradcheck", "--only", "nope"]) == 1


def test_synth_train_enhance_eval(tmp_path, capsys):
    data = tmp_path / "data"
    assert cli(["synth", "--procedural", "5", "--size", "16", "--output-dir", str(data), "--seed", "2"]) == 0
    assert len(list((data / "low").glob("*.png"))) == 5
    (tmp_path / "cfg.json").write_text(SMALL)
    run = tmp_path / "run"
    assert cli(["train", "--data", str(data), "--out-dir", str(run), "--config", str(tmp_path / "cfg.json"),
                "--iterations", "3"]) == 0
    assert (run / "last.ckpt").exists() and (run / "train_log.tsv").exists()

    # an odd-sized input is padded for the network and cropped back
    write_image(tmp_path / "odd.png", np.full((3, 13, 10), 0.2))
    assert cli(["enhance", "--checkpoint", str(run / "last.ckpt"), "--input", str(tmp_path / "odd.png"),
                "--output", str(tmp_path / "pred" / "scene0000.png")]) == 0
    assert read_image(tmp_path / "pred" / "scene0000.png").shape == (3, 13, 10)

    pred = tmp_path / "pred2"
    for p in sorted((data / "low").glob("*.png"))[:2]:
        assert cli(["enhance", "--checkpoint", str(run / "last.ckpt"), "--input", str(p),
                    "--output", str(pred / p.name)]) == 0
    capsys.readouterr()
    assert cli(["eval", "--pred-dir", str(pred), "--gt-dir", str(data / "gt"), "--out", str(tmp_path / "r.tsv")]) == 0
    captured = capsys.readouterr()
    assert "2 images" in captured.out and "3 unmatched" in captured.out
    assert captured.err.count("warning: unmatched") == 3


def test_eval_no_match_is_error(tmp_path, rng, capsys):
    write_image(tmp_path / "a" / "x.png", rng.random((3, 16, 16)))
    write_image(tmp_path / "b" / "y.png", rng.random((3, 16, 16)))
    assert cli(["eval", "--pred-dir", str(tmp_path / "a"), "--gt-dir", str(tmp_path / "b"),
                "--out", str(tmp_path / "r.tsv")]) == 1
    assert "no matched pairs" in capsys.readouterr().err


def test_ablate_small(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(SMALL)
    assert cli(["ablate", "--variants", "full,m_a", "--budget", "2", "--config", str(tmp_path / "cfg.json"),
                "--train-pairs", "4", "--val-pairs", "2", "--size", "16", "--out", str(tmp_path / "abl.tsv")]) == 0
    rows = (tmp_path / "abl.tsv").read_text().splitlines()
    assert len(rows) == 3 and rows[1].startswith("full") and rows[2].startswith("m_a")


def test_missing_checkpoint(tmp_path, capsys):
    assert cli(["enhance", "--checkpoint", str(tmp_path / "none.ckpt"), "--input", "x.png",
                "--output", "y.png"]) == 1
