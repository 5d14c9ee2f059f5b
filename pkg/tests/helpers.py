"""Small in-memory datasets and models shared by the training tests."""

import numpy as np

from endogen.cleansing import DomainDataset, ImageRecord
from endogen.nets import ArchitectureSpec
from endogen.training import TrainingConfig

SMALL_SPEC = ArchitectureSpec("shallow_unet", 4, (32, 32, 3))


def array_dataset(domain: str, n: int, size: int = 32, seed: int = 0) -> DomainDataset:
    rng = np.random.default_rng(seed)
    arrays = rng.random((n, size, size, 3), dtype=np.float32)
    records = [ImageRecord(f"{domain}_{i:03d}", f"/nonexistent/{domain}_{i:03d}.png", domain) for i in range(n)]
    return DomainDataset(domain, records, size, arrays=arrays)


def small_config(**kw) -> TrainingConfig:
    base = dict(epochs=1, batch_size=4, learning_rate=2e-4, fake_buffer_size=4, seed=3, disc_base_channels=4)
    base.update(kw)
    return TrainingConfig(**base)
