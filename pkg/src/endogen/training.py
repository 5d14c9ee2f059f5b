"""Alternating min-max training of the cycle-consistent translator pair."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointError, save_checkpoint
from .cleansing import DomainDataset, UnpairedSampler
from .losses import LossWeights, cycle_loss, gan_value, generator_adversarial, total_loss
from .nets import ArchitectureSpec, CycleGanModel

LOG_HEADER = ("step", "epoch", "L_gan_G", "L_gan_F", "L_cyc", "L_total", "acc_DR", "acc_DV")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 100
    batch_size: int = 20
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    fake_buffer_size: int = 50
    checkpoint_every: int = 1
    seed: int = 0
    disc_base_channels: int = 64

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.fake_buffer_size < 0:
            raise ValueError(f"fake_buffer_size must be >= 0, got {self.fake_buffer_size}")
        if self.checkpoint_every < 1:
            raise ValueError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")


@dataclass(frozen=True)
class LossRecord:
    step: int
    epoch: int
    L_gan_G: float
    L_gan_F: float
    L_cyc: float
    L_total: float
    acc_DR: float
    acc_DV: float

    def row(self) -> list[str]:
        return [repr(v) if isinstance(v, float) else str(v) for v in asdict(self).values()]


class FakePool:
    """History of generated images; with probability 1/2 a stored image is
    swapped in for the fresh one once the pool is full. Size 0 passes through."""

    def __init__(self, size: int):
        self.size = size
        self.images: list[torch.Tensor] = []

    def query(self, batch: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
        if self.size == 0:
            return batch.detach()
        out = []
        for img in batch.detach():
            img = img.clone()
            if len(self.images) < self.size:
                self.images.append(img)
                out.append(img)
            elif rng.random() < 0.5:
                i = int(rng.integers(self.size))
                out.append(self.images[i])
                self.images[i] = img
            else:
                out.append(img)
        return torch.stack(out)


@dataclass
class TrainState:
    opt_G: torch.optim.Adam
    opt_D: torch.optim.Adam
    pool_R: FakePool
    pool_V: FakePool


def _gen_params(model):
    return [*model.G.params.values(), *model.F.params.values()]


def _disc_params(model):
    return [*model.D_R.params.values(), *model.D_V.params.values()]


def ensure_train_state(model: CycleGanModel, cfg: TrainingConfig) -> TrainState:
    if model.train_state is None:
        model.train_state = TrainState(
            torch.optim.Adam(_gen_params(model), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2)),
            torch.optim.Adam(_disc_params(model), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2)),
            FakePool(cfg.fake_buffer_size),
            FakePool(cfg.fake_buffer_size),
        )
    state = model.train_state
    for opt in (state.opt_G, state.opt_D):
        for group in opt.param_groups:
            group["lr"] = cfg.learning_rate
            group["betas"] = (cfg.beta1, cfg.beta2)
    return state


def restore_train_state(model: CycleGanModel, meta: dict, arrays: dict[str, np.ndarray]):
    """Rebuild optimizer moments and fake pools from checkpoint arrays."""
    size = int(meta.get("fake_buffer_size", 50))
    state = ensure_train_state(model, TrainingConfig(fake_buffer_size=size))
    nets = model.networks()
    for opt, names, step_key in ((state.opt_G, ("G", "F"), "adam_step_gen"), (state.opt_D, ("D_R", "D_V"), "adam_step_disc")):
        step = int(meta[step_key])
        if step == 0:
            continue
        for net_name in names:
            for name, p in nets[net_name].params.items():
                prefix = f"optim/{net_name}/{name}"
                try:
                    m, v = arrays[f"{prefix}/exp_avg"], arrays[f"{prefix}/exp_avg_sq"]
                except KeyError:
                    raise CheckpointError(f"checkpoint lacks optimizer state for {prefix}") from None
                opt.state[p] = {
                    "step": torch.tensor(float(step)),
                    "exp_avg": torch.from_numpy(m.copy()).to(p.dtype),
                    "exp_avg_sq": torch.from_numpy(v.copy()).to(p.dtype),
                }
    for domain, pool in (("R", state.pool_R), ("V", state.pool_V)):
        stored = arrays.get(f"pool/{domain}")
        if stored is not None:
            pool.images = [torch.from_numpy(a.copy()) for a in stored]


def to_network_range(images) -> torch.Tensor:
    """NHWC images in [0, 1] -> NCHW float32 tensor in [-1, 1]."""
    x = torch.as_tensor(np.asarray(images, dtype=np.float32))
    return (x * 2.0 - 1.0).permute(0, 3, 1, 2).contiguous()


def from_network_range(x: torch.Tensor) -> np.ndarray:
    """NCHW tensor in [-1, 1] -> NHWC numpy array in [0, 1]."""
    return ((x.detach().permute(0, 2, 3, 1).cpu().numpy() + 1.0) / 2.0).clip(0.0, 1.0)


def _accuracy(d_real: torch.Tensor, d_fake: torch.Tensor) -> float:
    return 0.5 * (float((d_real > 0.5).float().mean()) + float((d_fake < 0.5).float().mean()))


def _require_finite(**terms):
    for name, value in terms.items():
        value = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss term {name} = {value}")


def _set_requires_grad(nets, flag: bool):
    for net in nets:
        for p in net.parameters():
            p.requires_grad_(flag)


def train_step(model: CycleGanModel, v_batch: torch.Tensor, r_batch: torch.Tensor,
               cfg: TrainingConfig, w: LossWeights) -> tuple[CycleGanModel, LossRecord]:
    """One alternating update on NCHW batches in [-1, 1].

    Discriminators ascend :func:`gan_value` first (on pooled fakes), then the
    generators descend their adversarial terms plus ``lambda_cyc`` times the
    cycle loss. The returned record holds losses evaluated before either update.
    """
    state = ensure_train_state(model, cfg)
    G, F_, D_R, D_V = model.G, model.F, model.D_R, model.D_V
    eps = w.epsilon_log

    fake_r = G(v_batch)
    fake_v = F_(r_batch)
    rec_v = F_(fake_r)
    rec_r = G(fake_v)

    with torch.no_grad():
        dr_real, dr_fake = D_R(r_batch), D_R(fake_r)
        dv_real, dv_fake = D_V(v_batch), D_V(fake_v)
        gan_G = float(gan_value(dr_real, dr_fake, eps))
        gan_F = float(gan_value(dv_real, dv_fake, eps))
        cyc = float(cycle_loss(v_batch, rec_v, r_batch, rec_r))
        _require_finite(L_gan_G=gan_G, L_gan_F=gan_F, L_cyc=cyc)
        total = float(total_loss(gan_G, gan_F, cyc, w))
        record = LossRecord(model.step, model.epoch, gan_G, gan_F, cyc, total,
                            _accuracy(dr_real, dr_fake), _accuracy(dv_real, dv_fake))

    # discriminators: maximize gan_value
    pooled_r = state.pool_R.query(fake_r, model.rng)
    pooled_v = state.pool_V.query(fake_v, model.rng)
    _set_requires_grad((D_R, D_V), True)
    state.opt_D.zero_grad(set_to_none=True)
    loss_D = -(gan_value(D_R(r_batch), D_R(pooled_r), eps) + gan_value(D_V(v_batch), D_V(pooled_v), eps))
    _require_finite(discriminator_objective=loss_D)
    loss_D.backward()
    state.opt_D.step()

    # generators: fool the updated discriminators, keep cycles consistent
    _set_requires_grad((D_R, D_V), False)
    state.opt_G.zero_grad(set_to_none=True)
    adv = generator_adversarial(D_R(fake_r), eps, w.gan_form) + generator_adversarial(D_V(fake_v), eps, w.gan_form)
    loss_G = adv + w.lambda_cyc * cycle_loss(v_batch, rec_v, r_batch, rec_r)
    _require_finite(generator_objective=loss_G)
    loss_G.backward()
    state.opt_G.step()
    _set_requires_grad((D_R, D_V), True)

    model.step += 1
    return model, record


@dataclass
class TrainResult:
    model: CycleGanModel
    checkpoint: Path
    log: Path
    records: list[LossRecord]


def _prepare_log(path: Path, resume_step: int) -> list[list[str]]:
    """Rows kept from an existing log when resuming (steps before ``resume_step``)."""
    if resume_step == 0 or not path.exists():
        return []
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [r for r in rows if r and int(r[0]) < resume_step]


def train(V: DomainDataset, R: DomainDataset, spec: ArchitectureSpec, cfg: TrainingConfig,
          w: LossWeights, out_dir: str | Path, resume: CycleGanModel | None = None,
          progress=None) -> TrainResult:
    """Run ``cfg.epochs`` epochs of ``ceil(max(I, J) / batch_size)`` steps each.

    Writes ``loss_log.csv``, ``checkpoint_epochNNNN.zip`` every ``checkpoint_every``
    epochs and ``final.zip``. Passing a model loaded from a checkpoint continues
    from its stored epoch, optimizer moments, fake pools and RNG state.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        model = resume
        if model.spec != spec:
            raise TrainingError(f"resume checkpoint is {model.spec}, requested {spec}")
    else:
        model = CycleGanModel.create(spec, cfg.seed, cfg.disc_base_channels)
    torch.manual_seed(cfg.seed)
    V, R = V.preload(), R.preload()
    sampler = UnpairedSampler(V, R, cfg.batch_size, model.rng)

    log_path = out_dir / "loss_log.csv"
    kept_rows = _prepare_log(log_path, model.step)
    records: list[LossRecord] = []
    with log_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        writer.writerows(kept_rows)
        for epoch in range(model.epoch, cfg.epochs):
            model.epoch = epoch
            for v_ids, r_ids in sampler.epoch_ids():
                v = to_network_range(V.get(v_ids))
                r = to_network_range(R.get(r_ids))
                model, rec = train_step(model, v, r, cfg, w)
                records.append(rec)
                writer.writerow(rec.row())
                if progress:
                    progress(rec)
            fh.flush()
            model.epoch = epoch + 1
            if model.epoch % cfg.checkpoint_every == 0 or model.epoch == cfg.epochs:
                try:
                    save_checkpoint(model, out_dir / f"checkpoint_epoch{model.epoch:04d}.zip", w)
                except CheckpointError as exc:
                    exc.model = model
                    raise
    final = save_checkpoint(model, out_dir / "final.zip", w)
    return TrainResult(model, final, log_path, records)


def read_loss_log(path: str | Path) -> list[LossRecord]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [LossRecord(**{k: int(v) if k in ("step", "epoch") else float(v) for k, v in r.items()}) for r in rows]
