"""Parameter initialization shared by the trainable modules."""

import math
from typing import Optional

import torch
from torch import nn


def kaiming_uniform_init_(module: nn.Module, seed: Optional[int] = None):
    """Uniform fan-in scaled init of every conv / linear weight, biases zero.

    With a seed the draw is isolated from (and leaves untouched) the global
    torch RNG."""
    def _apply():
        for sub in module.modules():
            if isinstance(sub, (nn.Conv1d, nn.Linear)):
                fan_in = sub.weight[0].numel()
                bound = math.sqrt(3.0 / fan_in)
                with torch.no_grad():
                    sub.weight.uniform_(-bound, bound)
                    if sub.bias is not None:
                        sub.bias.zero_()

    if seed is None:
        _apply()
        return
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        _apply()
