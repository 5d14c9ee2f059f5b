import zipfile

import numpy as np
import pytest
import torch

from endogen.checkpoint import CheckpointError, load_checkpoint, read_metadata, save_checkpoint
from endogen.losses import LossWeights
from endogen.nets import ArchitectureSpec, CycleGanModel


@pytest.fixture
def model():
    return CycleGanModel.create(ArchitectureSpec("residual_unet", 4, (32, 32, 3)), seed=5, disc_base_channels=4)


def test_round_trip_is_exact(model, tmp_path):
    model.epoch, model.step = 3, 17
    w = LossWeights(lambda_cyc=4.5, epsilon_log=1e-6, gan_form="log_saturating")
    path = save_checkpoint(model, tmp_path / "m.zip", w)
    loaded, weights, meta = load_checkpoint(path)
    assert weights == w
    assert loaded.spec == model.spec and loaded.epoch == 3 and loaded.step == 17
    assert loaded.disc_downsamplings == model.disc_downsamplings
    for name, net in model.networks().items():
        for key, p in net.params.items():
            assert torch.equal(p, loaded.networks()[name].params[key]), f"{name}/{key}"
    assert loaded.rng.random() == model.rng.random()


def test_metadata_names_variant_and_weights(model, tmp_path):
    path = save_checkpoint(model, tmp_path / "m.zip", LossWeights(lambda_cyc=10.0))
    meta = read_metadata(path)
    assert meta["variant"] == "residual_unet"
    assert float(meta["lambda_cyc"]) == 10.0
    assert meta["input_size"] == "32 32 3"


def test_saving_twice_gives_identical_bytes(model, tmp_path):
    a = save_checkpoint(model, tmp_path / "a.zip")
    b = save_checkpoint(model, tmp_path / "b.zip")
    assert a.read_bytes() == b.read_bytes()


def test_not_a_checkpoint(tmp_path):
    bad = tmp_path / "bad.zip"
    bad.write_bytes(b"not a zip")
    with pytest.raises(CheckpointError, match="cannot read"):
        load_checkpoint(bad)
    other = tmp_path / "other.zip"
    with zipfile.ZipFile(other, "w") as zf:
        zf.writestr("metadata.txt", "format = something-else\n")
    with pytest.raises(CheckpointError, match="not an"):
        load_checkpoint(other)


def test_missing_tensor_is_named(model, tmp_path):
    path = save_checkpoint(model, tmp_path / "m.zip")
    stripped = tmp_path / "stripped.zip"
    victim = "G/enc0/conv1/weight.npy"
    with zipfile.ZipFile(path) as src, zipfile.ZipFile(stripped, "w") as dst:
        names = src.namelist()
        assert victim in names, names[:10]
        for n in names:
            if n != victim:
                dst.writestr(n, src.read(n))
    with pytest.raises(CheckpointError, match="missing G/enc0/conv1/weight"):
        load_checkpoint(stripped)


def test_wrong_shape_is_named(model, tmp_path):
    path = save_checkpoint(model, tmp_path / "m.zip")
    other = CycleGanModel.create(ArchitectureSpec("residual_unet", 8, (32, 32, 3)), seed=5, disc_base_channels=4)
    bigger = save_checkpoint(other, tmp_path / "big.zip")
    mixed = tmp_path / "mixed.zip"
    with zipfile.ZipFile(path) as src, zipfile.ZipFile(bigger) as big, zipfile.ZipFile(mixed, "w") as dst:
        for n in src.namelist():
            dst.writestr(n, big.read(n) if n.startswith("F/") else src.read(n))
    with pytest.raises(CheckpointError, match=r"F/.* has shape"):
        load_checkpoint(mixed)


def test_weights_stored_as_float32(model, tmp_path):
    path = save_checkpoint(model, tmp_path / "m.zip")
    with zipfile.ZipFile(path) as zf:
        arr = np.lib.format.read_array(zf.open("D_R/" + next(iter(model.D_R.params)) + ".npy"))
    assert arr.dtype == np.dtype("<f4")
