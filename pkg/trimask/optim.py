import logging
import math
from dataclasses import dataclass, field, replace

import torch
from torch.optim.lr_scheduler import LambdaLR

from .exceptions import InvalidArgument, NonFiniteGradient
from .multipliers import UNIT, get_multipliers

logger = logging.getLogger("trimask.optim")

# Betas are clipped just below one so a large momentum multiplier cannot
# freeze the moment estimates.
MAX_BETA = 1 - 1e-6


@dataclass
class AdamWHyper:
    """
    Base AdamW hyperparameters plus a per-group multiplier preset and the
    learning rate schedule.
    """

    lr: float = 9e-4
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    warmup_steps: int = 1000
    warmup_fraction: float = 0.25
    lr_schedule: str = "cosine"
    min_lr: float = 1e-6
    multipliers: str = "unit"

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidArgument("lr must be positive")
        if not self.eps > 0:
            raise InvalidArgument("eps must be positive")
        if self.weight_decay < 0:
            raise InvalidArgument("weight_decay must be non-negative")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise InvalidArgument("%s must lie in [0, 1)" % name)
        if self.lr_schedule not in ("cosine", "constant"):
            raise InvalidArgument("Unknown lr_schedule %r" % self.lr_schedule)
        if not 0 <= self.warmup_fraction <= 1 or self.warmup_steps < 0:
            raise InvalidArgument("Bad warmup settings")
        get_multipliers(self.multipliers)

    @property
    def table(self):
        return get_multipliers(self.multipliers)

    def effective(self, group=None):
        """
        The GroupHyper a ParamGroup trains with.
        """
        multiplier = UNIT if group is None else self.table.for_group(group)
        return GroupHyper(
            lr=self.lr * multiplier.lr,
            weight_decay=self.weight_decay * multiplier.wd,
            beta1=effective_beta(self.beta1, multiplier.alpha1),
            beta2=effective_beta(self.beta2, multiplier.alpha2),
            eps=self.eps * multiplier.eps,
        )

    def warmup_for(self, total_steps):
        return min(self.warmup_steps, int(self.warmup_fraction * total_steps))

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class GroupHyper:
    lr: float
    weight_decay: float
    beta1: float
    beta2: float
    eps: float
    name: str = field(default="default", compare=False)


def effective_beta(beta, multiplier):
    """
    Momentum multipliers scale the half-life term 1 - beta.
    """
    return min(max(1.0 - multiplier * (1.0 - beta), 0.0), MAX_BETA)


def _check_finite(grads, names):
    for grad, name in zip(grads, names):
        if grad is not None and not torch.isfinite(grad).all():
            raise NonFiniteGradient(name)


@torch.no_grad()
def _update(param, grad, state, hyper, step, lr):
    if "exp_avg" not in state:
        state["exp_avg"] = torch.zeros_like(param)
        state["exp_avg_sq"] = torch.zeros_like(param)
    exp_avg, exp_avg_sq = state["exp_avg"], state["exp_avg_sq"]
    # Decoupled weight decay.
    param.mul_(1 - lr * hyper.weight_decay)
    exp_avg.mul_(hyper.beta1).add_(grad, alpha=1 - hyper.beta1)
    exp_avg_sq.mul_(hyper.beta2).addcmul_(grad, grad, value=1 - hyper.beta2)
    bias1 = 1 - hyper.beta1**step
    bias2 = 1 - hyper.beta2**step
    denom = (exp_avg_sq / bias2).sqrt_().add_(hyper.eps)
    param.addcdiv_(exp_avg, denom, value=-lr / bias1)


def adamw_step(params, grads, state, hyper, step, groups=None, lr_scale=1.0):
    """
    One bias-corrected AdamW update of ``params`` in place.

    ``state`` is a dict keyed by parameter index that this function fills
    with moment estimates; ``groups`` optionally gives the ParamGroup of every
    parameter. All gradients are checked before anything is updated.
    """
    if step < 1:
        raise InvalidArgument("AdamW steps are counted from 1")
    params, grads = list(params), list(grads)
    groups = list(groups) if groups is not None else [None] * len(params)
    if not len(params) == len(grads) == len(groups):
        raise InvalidArgument("Need one gradient and group per parameter")
    for param, grad in zip(params, grads):
        if grad.shape != param.shape:
            raise InvalidArgument(
                "Gradient shape %s does not match parameter %s"
                % (tuple(grad.shape), tuple(param.shape))
            )
    _check_finite(grads, [group.name if group else "default" for group in groups])
    for index, (param, grad, group) in enumerate(zip(params, grads, groups)):
        effective = hyper.effective(group)
        _update(param, grad, state.setdefault(index, {}), effective, step, effective.lr * lr_scale)


class AdamW(torch.optim.Optimizer):
    """
    AdamW over named parameter groups, each carrying its own effective
    hyperparameters. A non-finite gradient anywhere aborts the step before
    any parameter moves.
    """

    def __init__(self, param_groups):
        defaults = dict(lr=1e-3, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8)
        super().__init__(param_groups, defaults)

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            _check_finite(
                [param.grad for param in group["params"]],
                [group.get("name", "default")] * len(group["params"]),
            )
        for group in self.param_groups:
            beta1, beta2 = group["betas"]
            hyper = GroupHyper(group["lr"], group["weight_decay"], beta1, beta2, group["eps"])
            for param in group["params"]:
                if param.grad is None:
                    continue
                state = self.state[param]
                state["step"] = state.get("step", 0) + 1
                _update(param, param.grad, state, hyper, state["step"], group["lr"])
        return loss


def build_param_groups(model, hyper):
    """
    One optimizer group per ParamGroup present in the model.
    """
    buckets = {}
    for name, parameter in model.named_parameters():
        if not parameter.requires_grad:
            continue
        group = model.group_of(name)
        buckets.setdefault(group.name, (group, []))[1].append(parameter)
    param_groups = []
    for group_name, (group, parameters) in sorted(buckets.items()):
        effective = hyper.effective(group)
        param_groups.append(
            {
                "params": parameters,
                "name": group_name,
                "lr": effective.lr,
                "weight_decay": effective.weight_decay,
                "betas": (effective.beta1, effective.beta2),
                "eps": effective.eps,
            }
        )
    return param_groups


def lr_factor(step, total_steps, hyper):
    """
    Multiplier on every group's learning rate after ``step`` scheduler steps:
    linear warmup then cosine decay to min_lr.
    """
    warmup = hyper.warmup_for(total_steps)
    if warmup and step < warmup:
        return (step + 1) / warmup
    if hyper.lr_schedule == "constant":
        return 1.0
    progress = min((step - warmup) / max(1, total_steps - warmup), 1.0)
    floor = min(hyper.min_lr / hyper.lr, 1.0)
    return floor + (1 - floor) * 0.5 * (1 + math.cos(math.pi * progress))


def make_scheduler(optimizer, hyper, total_steps):
    return LambdaLR(optimizer, lambda step: lr_factor(step, total_steps, hyper))
