import math

import numpy as np
import pytest
import torch

from endogen.checkpoint import load_checkpoint
from endogen.losses import LossWeights, cycle_loss, gan_value
from endogen.nets import ArchitectureSpec, CycleGanModel
from endogen.training import (
    LOG_HEADER,
    FakePool,
    TrainingConfig,
    TrainingError,
    from_network_range,
    read_loss_log,
    to_network_range,
    train,
    train_step,
)
from helpers import SMALL_SPEC, array_dataset, small_config


def _batches(seed=0, n=2, size=32):
    rng = np.random.default_rng(seed)
    v = to_network_range(rng.random((n, size, size, 3), dtype=np.float32))
    r = to_network_range(rng.random((n, size, size, 3), dtype=np.float32))
    return v, r


def _params(model):
    return {f"{k}/{n}": p.detach().clone() for k, net in model.networks().items() for n, p in net.params.items()}


def test_network_range_round_trip(rng):
    images = rng.random((2, 5, 7, 3), dtype=np.float32)
    x = to_network_range(images)
    assert x.shape == (2, 3, 5, 7)
    assert float(x.min()) >= -1 and float(x.max()) <= 1
    np.testing.assert_allclose(from_network_range(x), images, atol=1e-6)


def test_zero_learning_rate_leaves_parameters_unchanged():
    model = CycleGanModel.create(SMALL_SPEC, seed=1, disc_base_channels=4)
    before = _params(model)
    v, r = _batches()
    for _ in range(2):
        model, rec = train_step(model, v, r, small_config(learning_rate=0.0), LossWeights())
        assert all(math.isfinite(x) for x in (rec.L_gan_G, rec.L_gan_F, rec.L_cyc, rec.L_total))
    after = _params(model)
    for k in before:
        assert torch.equal(before[k], after[k]), k
    assert model.step == 2


def test_record_holds_losses_before_the_update():
    model = CycleGanModel.create(SMALL_SPEC, seed=2, disc_base_channels=4)
    v, r = _batches(1)
    w = LossWeights(lambda_cyc=7.0)
    with torch.no_grad():
        fake_r, fake_v = model.G(v), model.F(r)
        cyc = float(cycle_loss(v, model.F(fake_r), r, model.G(fake_v)))
        gan_G = float(gan_value(model.D_R(r), model.D_R(fake_r), w.epsilon_log))
    _, rec = train_step(model, v, r, small_config(), w)
    assert rec.L_cyc == pytest.approx(cyc, rel=1e-6)
    assert rec.L_gan_G == pytest.approx(gan_G, rel=1e-6)
    assert rec.L_total == pytest.approx(rec.L_gan_G + rec.L_gan_F + 7.0 * rec.L_cyc, rel=1e-6)
    assert rec.step == 0 and 0 <= rec.acc_DR <= 1 and 0 <= rec.acc_DV <= 1


def test_positive_learning_rate_changes_every_network():
    model = CycleGanModel.create(SMALL_SPEC, seed=1, disc_base_channels=4)
    before = _params(model)
    model, _ = train_step(model, *_batches(), small_config(learning_rate=1e-3), LossWeights())
    after = _params(model)
    for net in ("G", "F", "D_R", "D_V"):
        assert any(not torch.equal(before[k], after[k]) for k in before if k.startswith(net + "/")), net


def test_non_finite_term_raises_and_names_it():
    model = CycleGanModel.create(SMALL_SPEC, seed=1, disc_base_channels=4)
    with torch.no_grad():
        next(iter(model.G.params.values())).fill_(float("nan"))
    with pytest.raises(TrainingError, match="L_gan_G"):
        train_step(model, *_batches(), small_config(), LossWeights())


def test_epoch_step_count_and_log(tmp_path):
    V, R = array_dataset("virtual", 40, seed=1), array_dataset("real", 40, seed=2)
    cfg = small_config(batch_size=20, learning_rate=0.0)
    result = train(V, R, SMALL_SPEC, cfg, LossWeights(), tmp_path)
    assert len(result.records) == 2
    lines = result.log.read_text().splitlines()
    assert lines[0] == ",".join(LOG_HEADER)
    assert len(lines) == 3
    assert [r.step for r in read_loss_log(result.log)] == [0, 1]
    assert (tmp_path / "checkpoint_epoch0001.zip").exists() and result.checkpoint.name == "final.zip"


def test_unequal_domains_use_the_larger_count(tmp_path):
    V, R = array_dataset("virtual", 10, seed=1), array_dataset("real", 25, seed=2)
    result = train(V, R, SMALL_SPEC, small_config(batch_size=4, learning_rate=0.0), LossWeights(), tmp_path)
    assert len(result.records) == 7


def test_training_is_deterministic(tmp_path):
    V, R = array_dataset("virtual", 20, seed=1), array_dataset("real", 20, seed=2)
    cfg = small_config(epochs=2, batch_size=4)
    a = train(V, R, SMALL_SPEC, cfg, LossWeights(), tmp_path / "a")
    b = train(V, R, SMALL_SPEC, cfg, LossWeights(), tmp_path / "b")
    assert len(a.records) == 10
    for ra, rb in zip(a.records, b.records):
        assert ra == rb
    assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()


def test_resume_matches_uninterrupted(tmp_path):
    V, R = array_dataset("virtual", 12, seed=1), array_dataset("real", 12, seed=2)
    full = train(V, R, SMALL_SPEC, small_config(epochs=2), LossWeights(), tmp_path / "full")

    half = train(V, R, SMALL_SPEC, small_config(epochs=1), LossWeights(), tmp_path / "half")
    model, _, meta = load_checkpoint(half.checkpoint)
    assert meta["epoch"] == "1" and meta["step"] == "3"
    resumed = train(V, R, SMALL_SPEC, small_config(epochs=2), LossWeights(), tmp_path / "half", resume=model)

    assert [r.step for r in resumed.records] == [3, 4, 5]
    for ra, rb in zip(full.records[3:], resumed.records):
        for field in ("L_gan_G", "L_gan_F", "L_cyc", "L_total"):
            assert getattr(ra, field) == pytest.approx(getattr(rb, field), abs=1e-5)
    for k, p in _params(full.model).items():
        np.testing.assert_allclose(p.numpy(), _params(resumed.model)[k].numpy(), atol=1e-5, err_msg=k)
    # the log keeps the rows from before the interruption
    assert [r.step for r in read_loss_log(resumed.log)] == list(range(6))


def test_resume_rejects_other_architecture(tmp_path):
    V, R = array_dataset("virtual", 4, seed=1), array_dataset("real", 4, seed=2)
    model = CycleGanModel.create(SMALL_SPEC, 0, 4)
    other = ArchitectureSpec("unet", 4, (32, 32, 3))
    with pytest.raises(TrainingError, match="resume"):
        train(V, R, other, small_config(), LossWeights(), tmp_path, resume=model)


def test_training_config_validation():
    for kw in ({"epochs": 0}, {"batch_size": 0}, {"learning_rate": -1.0}, {"fake_buffer_size": -1},
               {"checkpoint_every": 0}):
        with pytest.raises(ValueError, match=next(iter(kw))):
            TrainingConfig(**kw)


def test_fake_pool_size_zero_passes_through(rng):
    batch = torch.randn(3, 3, 4, 4, requires_grad=True)
    out = FakePool(0).query(batch, rng)
    assert torch.equal(out, batch.detach()) and not out.requires_grad


def test_fake_pool_fills_then_mixes(rng):
    pool = FakePool(4)
    first = torch.arange(4.0).reshape(4, 1, 1, 1)
    assert torch.equal(pool.query(first, rng), first)
    assert len(pool.images) == 4
    seen = set()
    for k in range(20):
        fresh = torch.full((2, 1, 1, 1), 100.0 + k)
        out = pool.query(fresh, rng)
        assert out.shape == fresh.shape
        seen.update(float(x) for x in out.flatten())
        assert len(pool.images) == 4
    # both stored history and fresh images are returned
    assert any(x < 100 for x in seen) and any(x >= 100 for x in seen)
