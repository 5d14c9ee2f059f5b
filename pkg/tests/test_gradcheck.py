import pytest
import torch

from endogen.gradcheck import numeric_gradient_check
from endogen.losses import LossWeights
from endogen.nets import ArchitectureSpec

SPEC = ArchitectureSpec("shallow_unet", 4, (16, 16, 3))


def test_gradients_agree_with_differences():
    result = numeric_gradient_check(SPEC, seed=0, params_per_network=20)
    assert result.checked == 80
    assert set(result.per_network) == {"G", "F", "D_R", "D_V"}
    assert float(result) < 1e-3


def test_doubled_entry_gives_error_one_half():
    result = numeric_gradient_check(SPEC, seed=0, params_per_network=20, inject_fault=True)
    # |2a - a| / max(|2a|, |a|) = 1/2
    assert result.per_network["G"] == pytest.approx(0.5, abs=1e-3)
    assert result.per_network["F"] < 1e-3


def test_without_cycle_term():
    assert float(numeric_gradient_check(SPEC, LossWeights(lambda_cyc=0.0), seed=1, params_per_network=20)) < 1e-3


def test_leaves_torch_rng_untouched():
    state = torch.get_rng_state()
    numeric_gradient_check(SPEC, seed=2, params_per_network=2)
    assert torch.equal(state, torch.get_rng_state())


def test_refuses_large_specs():
    with pytest.raises(ValueError, match="tiny"):
        numeric_gradient_check(ArchitectureSpec("unet", 64, (256, 256, 3)))
