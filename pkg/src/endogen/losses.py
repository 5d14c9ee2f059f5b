"""Adversarial, cycle-consistency and total objectives.

All functions accept tensors or array-likes and return 0-dim torch tensors, so
the same code serves training (autograd) and plain evaluation (``float(...)``).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

GAN_FORMS = ("log_saturating", "log_nonsaturating")


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_cyc: float = 10.0
    epsilon_log: float = 1e-7
    gan_form: str = "log_nonsaturating"

    def __post_init__(self):
        if self.lambda_cyc < 0:
            raise ValueError(f"lambda_cyc must be >= 0, got {self.lambda_cyc}")
        if not 0 < self.epsilon_log <= 1e-3:
            raise ValueError(f"epsilon_log must be in (0, 1e-3], got {self.epsilon_log}")
        if self.gan_form not in GAN_FORMS:
            raise ValueError(f"gan_form must be one of {GAN_FORMS}, got {self.gan_form!r}")


def _tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def _check_probabilities(x: torch.Tensor, name: str):
    x = x.detach()
    lo, hi = float(x.min()), float(x.max())
    if lo < -1e-6 or hi > 1 + 1e-6:
        raise DomainError(f"{name} must lie in [0, 1], got range [{lo}, {hi}]")


def gan_value(d_real, d_fake, eps: float = 1e-7) -> torch.Tensor:
    """mean log D(real) + mean log(1 - D(fake)), means over batch and patch positions.

    Log arguments are clamped to [eps, 1]. The discriminator maximizes this value.
    """
    d_real, d_fake = _tensor(d_real), _tensor(d_fake)
    _check_probabilities(d_real, "d_real")
    _check_probabilities(d_fake, "d_fake")
    real_term = torch.log(d_real.clamp(eps, 1.0)).mean()
    fake_term = torch.log((1.0 - d_fake).clamp(eps, 1.0)).mean()
    return real_term + fake_term


def generator_adversarial(d_fake, eps: float = 1e-7, form: str = "log_nonsaturating") -> torch.Tensor:
    """Adversarial term the generator minimizes.

    ``log_nonsaturating``: -mean log D(fake). ``log_saturating``: mean log(1 - D(fake)),
    i.e. the generator's share of :func:`gan_value` taken literally.
    """
    d_fake = _tensor(d_fake)
    _check_probabilities(d_fake, "d_fake")
    if form == "log_nonsaturating":
        return -torch.log(d_fake.clamp(eps, 1.0)).mean()
    if form == "log_saturating":
        return torch.log((1.0 - d_fake).clamp(eps, 1.0)).mean()
    raise ValueError(f"unknown gan_form {form!r}")


def cycle_loss(v, v_reconstructed, r, r_reconstructed) -> torch.Tensor:
    """Mean absolute reconstruction error of F(G(v)) against v plus G(F(r)) against r."""
    v, v_rec, r, r_rec = map(_tensor, (v, v_reconstructed, r, r_reconstructed))
    if v.shape != v_rec.shape:
        raise ValueError(f"virtual reconstruction shape {tuple(v_rec.shape)} != input {tuple(v.shape)}")
    if r.shape != r_rec.shape:
        raise ValueError(f"real reconstruction shape {tuple(r_rec.shape)} != input {tuple(r.shape)}")
    return (v_rec - v).abs().mean() + (r_rec - r).abs().mean()


def total_loss(gan_G, gan_F, cyc, w: LossWeights) -> torch.Tensor:
    cyc = _tensor(cyc)
    if float(cyc) < 0:
        raise ValueError(f"cycle loss must be >= 0, got {float(cyc)}")
    return _tensor(gan_G) + _tensor(gan_F) + w.lambda_cyc * cyc
