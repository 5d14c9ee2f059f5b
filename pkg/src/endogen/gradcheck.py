"""Finite-difference verification of the generator objective's parameter gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .losses import LossWeights, cycle_loss, generator_adversarial
from .nets import ArchitectureSpec, CycleGanModel

REL_STEPS = tuple(10.0 ** -k for k in range(3, 11))
MIN_SCALE = 1e-1
ABS_FLOOR = 1e-8
CONVERGED = 1e-5
# objective differences below this many ulps of the objective are roundoff
ROUNDOFF_ULPS = 1e2


@dataclass(frozen=True)
class GradCheckResult:
    max_relative_error: float
    per_network: dict[str, float]
    checked: int

    def __float__(self) -> float:
        return self.max_relative_error


def generator_objective(model: CycleGanModel, v: torch.Tensor, r: torch.Tensor, w: LossWeights) -> torch.Tensor:
    fake_r, fake_v = model.G(v), model.F(r)
    adv = generator_adversarial(model.D_R(fake_r), w.epsilon_log, w.gan_form)
    adv = adv + generator_adversarial(model.D_V(fake_v), w.epsilon_log, w.gan_form)
    return adv + w.lambda_cyc * cycle_loss(v, model.F(fake_r), r, model.G(fake_v))


def _pick(net, count: int, rng: np.random.Generator) -> list[tuple[str, int]]:
    """Stratified choice: a random tensor, then a random entry, without repeats."""
    names = list(net.params.keys())
    sizes = {n: net.params[n].numel() for n in names}
    count = min(count, sum(sizes.values()))
    chosen: set[tuple[str, int]] = set()
    while len(chosen) < count:
        name = names[rng.integers(len(names))]
        chosen.add((name, int(rng.integers(sizes[name]))))
    return sorted(chosen)


def _ladder_estimate(flat: torch.Tensor, i: int, objective, noise: float) -> float:
    orig = float(flat[i])
    values, best, best_spread = [], None, np.inf
    for rel in REL_STEPS:
        step = rel * max(abs(orig), MIN_SCALE)
        flat[i] = orig + step
        plus = objective()
        flat[i] = orig - step
        minus = objective()
        if values and abs(plus - minus) < noise:
            break
        values.append((plus - minus) / (2 * step))
        if len(values) > 1:
            a, b = values[-2], values[-1]
            spread = abs(a - b) / max(abs(a), abs(b), ABS_FLOOR)
            if spread < best_spread:
                # the larger step of the pair carries less roundoff
                best, best_spread = a, spread
            if spread < CONVERGED:
                break
    flat[i] = orig
    return values[0] if best is None else best


def numeric_gradient_check(spec: ArchitectureSpec, w: LossWeights = LossWeights(), seed: int = 0,
                           params_per_network: int = 50, batch: int = 2,
                           inject_fault: bool = False) -> GradCheckResult:
    """Compare autograd gradients of the generator objective with central differences.

    Runs in float64 on a tiny model whose norm and bias parameters are moved off
    their initial values so no activation sits exactly on a ReLU kink.

    Each entry is differenced with a ladder of steps ``s * max(|p|, 0.1)`` for
    s in 1e-3 .. 1e-10. The numeric estimate is the larger-step value of the two
    consecutive ladder values that agree best, stopping early
    once two agree within 1e-5 or once the objective difference falls below
    about 100 ulp of the objective.
    Large steps lose to nearby kinks, small steps to roundoff; the selection
    never looks at the analytic value. With
    ``inject_fault`` the largest checked analytic entry of G is doubled, which
    the check must flag.
    """
    h = spec.input_size[0]
    if spec.base_channels > 8 or h > 32:
        raise ValueError(f"gradient check is meant for tiny specs (<= 32 px, base <= 8), got {spec}")
    torch_state = torch.get_rng_state()
    rng = np.random.default_rng(seed)
    model = CycleGanModel.create(spec, seed, disc_base_channels=spec.base_channels, dtype=torch.float64)
    with torch.no_grad():
        for net in model.networks().values():
            for name, p in net.params.items():
                if not name.endswith("/weight"):
                    p.add_(torch.from_numpy(rng.normal(0, 0.1, p.shape)))
    shape = (batch, 3, *spec.input_size[:2])
    v = torch.from_numpy(rng.uniform(-1, 1, shape))
    r = torch.from_numpy(rng.uniform(-1, 1, shape))

    def objective() -> float:
        with torch.no_grad():
            return float(generator_objective(model, v, r, w))

    for net in model.networks().values():
        net.zero_grad(set_to_none=True)
    generator_objective(model, v, r, w).backward()

    noise = ROUNDOFF_ULPS * np.finfo(np.float64).eps * max(abs(objective()), 1.0)
    per_network, checked = {}, 0
    for net_name, net in model.networks().items():
        picks = _pick(net, params_per_network, rng)
        analytic = np.array([float(net.params[n].grad.reshape(-1)[i]) for n, i in picks])
        if inject_fault and net_name == "G":
            analytic[np.argmax(np.abs(analytic))] *= 2.0
        errors = []
        for (name, i), a in zip(picks, analytic):
            flat = net.params[name].data.view(-1)
            numeric = _ladder_estimate(flat, i, objective, noise)
            errors.append(abs(a - numeric) / max(abs(a), abs(numeric), ABS_FLOOR))
        per_network[net_name] = float(max(errors))
        checked += len(picks)
    torch.set_rng_state(torch_state)
    return GradCheckResult(max(per_network.values()), per_network, checked)
