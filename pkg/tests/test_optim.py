import math

import pytest
import torch

from core.config import OptimizerSection, ScheduleSection
from core.errors import NonFiniteGradientError
from trainer.optim import LINEAR, TRISTAGE, LrSchedule, adam_step, build_optimizer, lr_at

# full-scale schedules
PRETRAIN = LrSchedule(kind=LINEAR, peak=5e-4, warmup_steps=32_000, total_steps=400_000)
FINETUNE = LrSchedule(kind=TRISTAGE, peak=3e-5, warmup_steps=8_000, hold_steps=32_000, decay_steps=40_000)


def test_pretrain_warmup():
    assert lr_at(0, PRETRAIN) == 0.0
    assert lr_at(16_000, PRETRAIN) == pytest.approx(2.5e-4)
    assert lr_at(32_000, PRETRAIN) == pytest.approx(5e-4)


def test_pretrain_decays_linearly_to_zero():
    assert lr_at(216_000, PRETRAIN) == pytest.approx(2.5e-4)
    assert lr_at(400_000, PRETRAIN) == 0.0
    assert lr_at(500_000, PRETRAIN) == 0.0


def test_finetune_holds_then_decays_exponentially():
    for step in (8_000, 20_000, 40_000):
        assert lr_at(step, FINETUNE) == pytest.approx(3e-5)
    assert lr_at(4_000, FINETUNE) == pytest.approx(1.5e-5)
    assert lr_at(60_000, FINETUNE) == pytest.approx(3e-5 * math.sqrt(0.05))
    assert lr_at(80_000, FINETUNE) == pytest.approx(1.5e-6)
    assert lr_at(120_000, FINETUNE) == pytest.approx(1.5e-6)


def test_schedules_are_continuous_at_the_breakpoints():
    for sched in (PRETRAIN, FINETUNE):
        for edge in (sched.warmup_steps, sched.warmup_steps + sched.hold_steps):
            assert lr_at(edge - 1, sched) == pytest.approx(lr_at(edge, sched), rel=1e-3)


def test_invalid_steps_and_kinds():
    with pytest.raises(ValueError):
        lr_at(-1, PRETRAIN)
    with pytest.raises(ValueError):
        lr_at(10, LrSchedule(kind="cosine"))


def test_schedule_from_config_defaults_total_steps():
    sched = LrSchedule.from_config(ScheduleSection(warmup_steps=10), default_total=100)
    assert sched.total_steps == 100
    assert lr_at(55, sched) == pytest.approx(2.5e-4)


def _param(*values):
    return torch.nn.Parameter(torch.tensor(values, dtype=torch.float64))


def test_first_adam_step_moves_by_lr_times_sign():
    param = _param(1.0, -2.0, 3.0)
    optimizer = build_optimizer([param], OptimizerSection())
    param.grad = torch.tensor([0.5, -4.0, 1e-3], dtype=torch.float64)
    adam_step(optimizer, lr=0.01)
    assert param.detach().tolist() == pytest.approx([0.99, -1.99, 2.99], abs=1e-6)
    assert param.grad is None


def test_zero_gradient_leaves_parameters_unchanged():
    param = _param(1.0, 2.0)
    optimizer = build_optimizer([param], OptimizerSection())
    param.grad = torch.zeros(2, dtype=torch.float64)
    adam_step(optimizer, lr=0.1)
    assert param.detach().tolist() == [1.0, 2.0]


def test_parameters_without_gradients_are_skipped():
    frozen, trained = _param(1.0), _param(1.0)
    optimizer = build_optimizer([frozen, trained], OptimizerSection())
    trained.grad = torch.ones(1, dtype=torch.float64)
    adam_step(optimizer, lr=0.1)
    assert frozen.item() == 1.0
    assert trained.item() == pytest.approx(0.9)
    assert frozen not in optimizer.state


def test_non_finite_gradient_aborts_the_step():
    param = _param(1.0, 2.0)
    optimizer = build_optimizer([param], OptimizerSection())
    param.grad = torch.tensor([float("nan"), 1.0], dtype=torch.float64)
    with pytest.raises(NonFiniteGradientError):
        adam_step(optimizer, lr=0.1)
    assert param.detach().tolist() == [1.0, 2.0]
