import numpy as np
import pytest

import dffn.train as train_mod
from dffn.checkpoint import load_checkpoint
from dffn.datagen import toy_corpus
from dffn.network import DffnConfig
from dffn.train import (LOG_COLUMNS, TrainConfig, TrainingAborted, ablate, evaluate_pairs, load_configs,
                        train_loop)

NET = DffnConfig(base_channels=4, level_channels=(4, 8), blocks_per_level=(2, 1), seed=1)


@pytest.fixture(scope="module")
def pairs():
    return toy_corpus(6, 16, seed=0)


def cfg(**kw):
    base = dict(iterations=6, batch=2, crop=16, seed=3, lr_init=1e-3)
    base.update(kw)
    return TrainConfig(**base)


def test_same_seed_reproduces_loss_curve(pairs):
    a = train_loop(pairs, cfg(), NET)
    b = train_loop(pairs, cfg(), NET)
    assert a.losses == b.losses
    assert a.batch_hashes == b.batch_hashes
    for p, q in zip(a.model.params(), b.model.params()):
        assert p.data.tobytes() == q.data.tobytes()


def test_different_seed_changes_data_order(pairs):
    a = train_loop(pairs, cfg(iterations=3), NET)
    b = train_loop(pairs, cfg(iterations=3, seed=4), NET)
    assert a.batch_hashes != b.batch_hashes


def test_one_step_changes_parameters(pairs):
    from dffn.network import init_params
    before = [p.data.copy() for p in init_params(NET).params()]
    res = train_loop(pairs, cfg(iterations=1), NET)
    assert any(not np.array_equal(b, p.data) for b, p in zip(before, res.model.params()))


def test_logs_and_checkpoints(tmp_path, pairs):
    res = train_loop(pairs, cfg(iterations=7, val_interval=3, verify_checkpoints=True), NET, pairs[:2],
                     out_dir=tmp_path)
    lines = (tmp_path / "train_log.tsv").read_text().splitlines()
    assert lines[0].split("\t") == list(LOG_COLUMNS)
    assert len(lines) == 8
    first = dict(zip(LOG_COLUMNS, lines[1].split("\t")))
    assert float(first["total"]) == pytest.approx(float(first["lA"]) + float(first["lP"]), rel=1e-6)
    assert [v["iter"] for v in res.validation] == [3, 6, 7]
    # 3 iterations per epoch: checkpoints after epochs 1, 2 and the partial third
    assert len(res.checkpoints) == 3
    ck = load_checkpoint(tmp_path / "last.ckpt")
    assert ck.iteration == 7 and ck.adam_t == 7


def test_nan_loss_aborts_and_keeps_last_good_checkpoint(tmp_path, pairs, monkeypatch):
    real = train_mod.total_loss
    calls = {"n": 0}

    def flaky(*args, **kw):
        rep = real(*args, **kw)
        calls["n"] += 1
        if calls["n"] == 5:
            rep.terms["total"] = float("nan")
        return rep

    monkeypatch.setattr(train_mod, "total_loss", flaky)
    with pytest.raises(TrainingAborted, match="non-finite loss at iteration 5") as exc:
        train_loop(pairs, cfg(iterations=9), NET, out_dir=tmp_path)
    assert exc.value.last_checkpoint == tmp_path / "last.ckpt"
    ck = load_checkpoint(tmp_path / "last.ckpt")
    assert ck.iteration == 3 and ck.epoch == 1


def test_ablation_variants_see_identical_batches(pairs, tmp_path):
    rows = ablate(["full", "m_a"], pairs, pairs[:2], cfg(iterations=2), NET, out=tmp_path / "a.tsv")
    assert rows[0]["data_digest"] == rows[1]["data_digest"]
    assert rows[0]["params"] > rows[1]["params"]
    assert (tmp_path / "a.tsv").read_text().splitlines()[0].startswith("variant\tparams")


def test_evaluate_pairs_reports_input_baseline(pairs):
    from dffn.network import init_params
    scores = evaluate_pairs(init_params(NET), pairs[:2])
    assert set(scores) == {"psnr", "ssim", "psnr_low"}


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(crop=20)
    with pytest.raises(ValueError):
        TrainConfig(batch=0)
    with pytest.raises(ValueError):
        TrainConfig(lr_init=0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 1})


def test_load_configs(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"net": {"variant": "m_b"}, "train": {"batch": 2}}')
    net, tr = load_configs(path)
    assert net.variant == "m_b" and tr.batch == 2 and tr.lr_init == 2e-4
    path.write_text('{"model": {}}')
    with pytest.raises(ValueError):
        load_configs(path)
