"""Learning-rate schedules and the Adam update."""

import math
from dataclasses import dataclass
from typing import Iterable

import torch

from core.errors import NonFiniteGradientError

LINEAR = "linear_warmup_linear_decay"
TRISTAGE = "tristage"


@dataclass(frozen=True)
class LrSchedule:
    kind: str = LINEAR
    peak: float = 5e-4
    warmup_steps: int = 0
    hold_steps: int = 0
    decay_steps: int = 0
    total_steps: int = 0
    final_fraction: float = 0.05

    @classmethod
    def from_config(cls, section, default_total: int) -> "LrSchedule":
        return cls(kind=section.kind, peak=section.peak, warmup_steps=section.warmup_steps,
                   hold_steps=section.hold_steps, decay_steps=section.decay_steps,
                   total_steps=section.total_steps or default_total, final_fraction=section.final_fraction)


def lr_at(step: int, sched: LrSchedule) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    warmup = sched.warmup_steps
    if step < warmup:
        return sched.peak * step / warmup

    if sched.kind == LINEAR:
        remaining = sched.total_steps - warmup
        if remaining <= 0:
            return sched.peak
        return sched.peak * max(0.0, (sched.total_steps - step) / remaining)

    if sched.kind == TRISTAGE:
        into_decay = step - warmup - sched.hold_steps
        if into_decay <= 0:
            return sched.peak
        if sched.decay_steps <= 0:
            return sched.peak * sched.final_fraction
        progress = min(into_decay, sched.decay_steps) / sched.decay_steps
        return sched.peak * math.exp(math.log(sched.final_fraction) * progress)

    raise ValueError(f"unknown schedule kind {sched.kind!r}")


def build_optimizer(params: Iterable[torch.nn.Parameter], section) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=0.0, betas=tuple(section.betas), eps=section.eps,
                            weight_decay=section.weight_decay)


def check_finite_gradients(optimizer: torch.optim.Optimizer):
    for group in optimizer.param_groups:
        for param in group["params"]:
            if param.grad is not None and not bool(torch.isfinite(param.grad).all()):
                raise NonFiniteGradientError()


def adam_step(optimizer: torch.optim.Adam, lr: float):
    """Bias-corrected Adam update at `lr`. Parameters whose grad is None are
    left untouched; a non-finite gradient aborts the step."""
    check_finite_gradients(optimizer)
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)
