import pytest
import torch

from trimask.exceptions import InvalidArgument, NonFiniteGradient
from trimask.multipliers import ParamGroup
from trimask.optim import (
    AdamW,
    AdamWHyper,
    adamw_step,
    build_param_groups,
    effective_beta,
    lr_factor,
    make_scheduler,
)
from trimask.transformer import ToyTransformer


@pytest.mark.parametrize(
    "beta,multiplier,expected",
    [(0.9, 1.0, 0.9), (0.9, 2.0, 0.8), (0.9, 20.0, 0.0), (0.95, 0.5, 0.975)],
)
def test_effective_beta(beta, multiplier, expected):
    assert effective_beta(beta, multiplier) == pytest.approx(expected)


def test_effective_beta_stays_below_one():
    assert effective_beta(0.999, 1e-9) < 1.0


@pytest.mark.parametrize(
    "changes",
    [{"lr": 0.0}, {"eps": -1.0}, {"beta1": 1.0}, {"lr_schedule": "step"}, {"multipliers": "x"}],
)
def test_hyper_validation(changes):
    with pytest.raises(InvalidArgument):
        AdamWHyper(**changes)


def test_per_module_effective_hyper():
    hyper = AdamWHyper(multipliers="per-module")
    effective = hyper.effective(ParamGroup("attn_qkv", "0-50"))
    assert effective.lr == pytest.approx(9e-4 * 1.714 * 1.102)
    assert effective.weight_decay == pytest.approx(0.1 * 0.821 * 0.725)
    assert effective.eps == pytest.approx(1e-8 * 0.391 * 0.663)
    unit = AdamWHyper().effective(ParamGroup("attn_qkv", "0-50"))
    assert (unit.lr, unit.beta1, unit.beta2) == pytest.approx((9e-4, 0.9, 0.95))


def test_adamw_first_step():
    param = torch.tensor([1.0], dtype=torch.float64)
    grad = torch.tensor([0.5], dtype=torch.float64)
    hyper = AdamWHyper(lr=0.1, weight_decay=0.1, eps=1e-8)
    adamw_step([param], [grad], {}, hyper, step=1)
    # decay to 0.99, then a bias-corrected step of lr * sign(grad)
    assert param.item() == pytest.approx(0.99 - 0.1, rel=1e-7)


def test_adamw_rejects_non_finite_before_updating():
    first = torch.tensor([1.0])
    second = torch.tensor([2.0])
    grads = [torch.tensor([0.1]), torch.tensor([float("nan")])]
    groups = [ParamGroup("norm1", "0-50"), ParamGroup("mlp_fc1", "50-100")]
    with pytest.raises(NonFiniteGradient) as info:
        adamw_step([first, second], grads, {}, AdamWHyper(), step=1, groups=groups)
    assert info.value.group == "mlp_fc1@50-100"
    assert first.item() == 1.0 and second.item() == 2.0


def test_adamw_step_counts_from_one():
    with pytest.raises(InvalidArgument):
        adamw_step([torch.zeros(1)], [torch.zeros(1)], {}, AdamWHyper(), step=0)


def test_optimizer_matches_functional_step():
    hyper = AdamWHyper(lr=0.01)
    functional = torch.tensor([0.3, -0.2], dtype=torch.float64)
    parameter = torch.nn.Parameter(functional.clone())
    effective = hyper.effective()
    optimizer = AdamW(
        [
            {
                "params": [parameter],
                "name": "default",
                "lr": effective.lr,
                "weight_decay": effective.weight_decay,
                "betas": (effective.beta1, effective.beta2),
                "eps": effective.eps,
            }
        ]
    )
    state = {}
    for step in range(1, 4):
        grad = torch.tensor([0.1 * step, -0.3], dtype=torch.float64)
        parameter.grad = grad.clone()
        optimizer.step()
        adamw_step([functional], [grad], state, hyper, step)
    assert torch.allclose(parameter.detach(), functional)


def test_optimizer_rejects_non_finite(vocab):
    model = ToyTransformer(vocab, n_layers=1, d_emb=8, n_heads=2, seed=0)
    optimizer = AdamW(build_param_groups(model, AdamWHyper()))
    before = [parameter.detach().clone() for parameter in model.parameters()]
    for parameter in model.parameters():
        parameter.grad = torch.zeros_like(parameter)
    model.norm.weight.grad[0] = float("inf")
    with pytest.raises(NonFiniteGradient) as info:
        optimizer.step()
    assert info.value.group == "unembedding_norm"
    for old, parameter in zip(before, model.parameters()):
        assert torch.equal(old, parameter)


def test_param_groups_cover_model(vocab):
    model = ToyTransformer(vocab, n_layers=2, d_emb=8, n_heads=2, seed=0)
    groups = build_param_groups(model, AdamWHyper(multipliers="per-module"))
    covered = [parameter for group in groups for parameter in group["params"]]
    assert len(covered) == len(list(model.parameters()))
    names = {group["name"] for group in groups}
    assert {"embedding.text", "unembedding_norm", "attn_qkv@0-50", "mlp_fc2@50-100"} <= names
    lrs = {group["name"]: group["lr"] for group in groups}
    assert lrs["embedding.text"] == pytest.approx(9e-4 * 3.937)


def test_lr_schedule():
    hyper = AdamWHyper(lr=1e-3, warmup_steps=1000, warmup_fraction=0.25, min_lr=1e-5)
    # warmup is capped at a quarter of a 100-step run
    assert hyper.warmup_for(100) == 25
    assert lr_factor(0, 100, hyper) == pytest.approx(1 / 25)
    assert lr_factor(24, 100, hyper) == pytest.approx(1.0)
    assert lr_factor(25, 100, hyper) == pytest.approx(1.0)
    assert lr_factor(100, 100, hyper) == pytest.approx(0.01)
    constant = hyper.replace(lr_schedule="constant")
    assert lr_factor(90, 100, constant) == 1.0


def test_scheduler_drives_group_lr():
    parameter = torch.nn.Parameter(torch.zeros(1))
    hyper = AdamWHyper(lr=1e-3, warmup_steps=2, warmup_fraction=1.0)
    optimizer = AdamW([{"params": [parameter], "lr": 1e-3}])
    scheduler = make_scheduler(optimizer, hyper, total_steps=10)
    assert optimizer.param_groups[0]["lr"] == pytest.approx(5e-4)
    parameter.grad = torch.zeros(1)
    optimizer.step()
    scheduler.step()
    assert optimizer.param_groups[0]["lr"] == pytest.approx(1e-3)
