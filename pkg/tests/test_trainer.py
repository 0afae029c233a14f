import csv

import numpy as np
import pytest
import torch

from poisson_retinex.image_io import save_image
from poisson_retinex.losses import LossBreakdown
from poisson_retinex.trainer import (
    LOG_HEADER,
    NonFiniteLossError,
    epoch_order,
    load_checkpoint,
    new_checkpoint,
    read_log,
    split_ids,
    train,
    train_step,
)
from poisson_retinex.config import TrainConfig
from poisson_retinex.image_io import random_crop_pair
from poisson_retinex.synthetic import synthetic_pairs


def small_config(**kw):
    base = dict(epochs=2, batch_size=2, patch=16, width=8, seed=3, val_fraction=0.0, checkpoint_every=1)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def pairs():
    return synthetic_pairs(4, 24, 0.2, 255, seed=11)


def test_zero_learning_rate_leaves_params_untouched(pairs):
    cfg = small_config(lr=0.0)
    before = {k: v.clone() for k, v in new_checkpoint(cfg).params.state_dict().items()}
    ckpt, rows = train(cfg, pairs)
    assert len(rows) == 4
    for k, v in ckpt.params.state_dict().items():
        assert torch.equal(v, before[k])


def test_training_is_deterministic(pairs, tmp_path):
    train(small_config(), pairs, run_dir=tmp_path / "a")
    train(small_config(), pairs, run_dir=tmp_path / "b")
    assert (tmp_path / "a/train_log.csv").read_bytes() == (tmp_path / "b/train_log.csv").read_bytes()
    assert (tmp_path / "a/ckpt_epoch2.bin").read_bytes() == (tmp_path / "b/ckpt_epoch2.bin").read_bytes()


def test_zero_epochs_writes_initial_checkpoint(pairs, tmp_path):
    cfg = small_config(epochs=0)
    ckpt, rows = train(cfg, pairs, run_dir=tmp_path)
    assert rows == [] and ckpt.step == 0
    back = load_checkpoint(tmp_path / "ckpt_epoch0.bin")
    ref = new_checkpoint(cfg).params.state_dict()
    assert all(torch.equal(v, ref[k]) for k, v in back.params.state_dict().items())
    assert read_log(tmp_path / "train_log.csv") == []


def test_resume_matches_uninterrupted_run(pairs, tmp_path):
    full = small_config(epochs=4, checkpoint_every=2)
    train(full, pairs, run_dir=tmp_path / "full")
    train(full.replace(epochs=2), pairs, run_dir=tmp_path / "part")
    ckpt = load_checkpoint(tmp_path / "part/ckpt_epoch2.bin")
    ckpt.config = full
    train(full, pairs, run_dir=tmp_path / "part", resume=ckpt)
    assert (tmp_path / "full/train_log.csv").read_text() == (tmp_path / "part/train_log.csv").read_text()
    a = load_checkpoint(tmp_path / "full/ckpt_epoch4.bin").params.state_dict()
    b = load_checkpoint(tmp_path / "part/ckpt_epoch4.bin").params.state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)


def test_log_format_and_additivity(pairs, tmp_path):
    cfg = small_config()
    train(cfg, pairs, run_dir=tmp_path)
    with open(tmp_path / "train_log.csv", newline="") as fh:
        assert next(csv.reader(fh)) == LOG_HEADER
    w = cfg.weights
    for row in read_log(tmp_path / "train_log.csv"):
        v = {k: float(row[k]) for k in LossBreakdown.FIELDS}
        parts = v["rec"] + w.lambda1 * (w.gamma * v["decom"] + (1 - w.gamma) * v["sps"]) + w.lambda2 * v["noise"]
        assert v["total"] == pytest.approx(parts, rel=1e-6)
    assert [int(r["step"]) for r in read_log(tmp_path / "train_log.csv")] == [0, 1, 2, 3]


def test_epoch_order_is_a_permutation():
    for epoch in range(5):
        assert sorted(epoch_order(17, 2, epoch)) == list(range(17))
    assert not np.array_equal(epoch_order(17, 2, 0), epoch_order(17, 2, 1))


def test_split_is_seeded_and_disjoint():
    ids = [f"im{i:02d}" for i in range(40)]
    cfg = small_config(val_fraction=0.1)
    train_ids, val_ids = split_ids(ids, cfg)
    assert len(val_ids) == 4 and not set(train_ids) & set(val_ids)
    assert split_ids(ids, cfg) == (train_ids, val_ids)


def test_non_finite_loss_aborts(pairs):
    cfg = small_config()
    ckpt = new_checkpoint(cfg)
    bad = random_crop_pair(pairs[0], 16, 0)
    high = bad.high.copy()
    high[0, 0, 0] = np.inf  # the clean image only enters the decomposition term
    batch = [type(bad)(bad.low, high, bad.id)]
    before = ckpt.params.stem.weight.clone()
    with pytest.raises(NonFiniteLossError) as info:
        train_step(ckpt.params, ckpt.optimizer, batch, cfg)
    assert info.value.culprit == "decom"
    assert torch.equal(before, ckpt.params.stem.weight)


def test_train_from_directory(tmp_path, pairs):
    for s in pairs:
        save_image(np.clip(s.low, 0, 1), tmp_path / "data/low" / f"{s.id}.png")
        save_image(s.high, tmp_path / "data/high" / f"{s.id}.png")
    ckpt, rows = train(small_config(epochs=1, val_fraction=0.25), tmp_path / "data", run_dir=tmp_path / "run")
    # one pair held out leaves three, i.e. two batches of at most two
    assert len(rows) == 2 and (tmp_path / "run/ckpt_epoch1.bin").exists()


def test_loss_decreases_on_a_short_run(pairs):
    _, rows = train(small_config(epochs=30, batch_size=4), pairs)
    totals = [float(r[-1]) for r in rows]
    assert np.mean(totals[-5:]) < np.mean(totals[:5])
