"""CTC head, loss and the frames-versus-targets feasibility guard."""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import torch
from torch import nn
from torch.nn import functional as F

from core.errors import CtcGuardViolation
from finetune.tokenizer import BLANK_ID

logger = logging.getLogger("lab.finetune.ctc")


@dataclass(frozen=True)
class GuardResult:
    ok: bool
    num_frames: int
    required_frames: int

    def __bool__(self) -> bool:
        return self.ok


def required_frames(target: Sequence[int]) -> int:
    """U plus one separating blank per adjacent repeated token"""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_length_guard(num_frames: int, target: Sequence[int]) -> GuardResult:
    needed = required_frames(list(target))
    return GuardResult(num_frames >= needed, num_frames, needed)


@dataclass
class CtcBatch:
    logits: torch.Tensor           # (T, V+1), or (B, T, V+1) with lengths
    targets: List[List[int]]
    lengths: torch.Tensor = None   # frames per utterance, batched form only

    def __post_init__(self):
        if self.logits.dim() == 2:
            self.logits = self.logits.unsqueeze(0)
            if self.targets and isinstance(self.targets[0], int):
                self.targets = [list(self.targets)]
        if self.lengths is None:
            self.lengths = torch.full((self.logits.shape[0],), self.logits.shape[1], dtype=torch.long)
        if len(self.targets) != self.logits.shape[0]:
            raise ValueError(f"{len(self.targets)} targets for a batch of {self.logits.shape[0]}")

    def violations(self) -> List[int]:
        return [i for i, (t, target) in enumerate(zip(self.lengths.tolist(), self.targets))
                if not ctc_length_guard(int(t), target)]


def ctc_loss(batch: CtcBatch, reduction: str = "sum") -> torch.Tensor:
    """-log p(target | logits) per utterance, summed (or mean / none).

    Computed in float64; raises instead of returning inf when a target
    cannot be aligned to its frames."""
    bad = batch.violations()
    if bad:
        t = int(batch.lengths[bad[0]])
        need = required_frames(batch.targets[bad[0]])
        raise CtcGuardViolation(f"{len(bad)} utterance(s) too short for their targets "
                                f"(first: {t} frames, {need} required)")
    log_probs = F.log_softmax(batch.logits.double(), dim=-1).transpose(0, 1)
    flat = torch.tensor([tok for target in batch.targets for tok in target], dtype=torch.long)
    target_lengths = torch.tensor([len(t) for t in batch.targets], dtype=torch.long)
    losses = F.ctc_loss(log_probs, flat, batch.lengths.long(), target_lengths, blank=BLANK_ID,
                        reduction="none", zero_infinity=False)
    if reduction == "none":
        return losses
    if reduction == "mean":
        return losses.mean()
    return losses.sum()


def ctc_loss_and_grad(logits: torch.Tensor, target: Sequence[int]) -> Tuple[float, torch.Tensor]:
    """Loss and d loss / d logits for one utterance"""
    logits = logits.detach().double().requires_grad_(True)
    loss = ctc_loss(CtcBatch(logits, [list(target)]))
    (grad,) = torch.autograd.grad(loss, logits)
    return float(loss), grad


class CtcHead(nn.Module):
    """Final projection from encoder states to token + blank logits"""

    def __init__(self, model_dim: int, num_outputs: int):
        super().__init__()
        self.projection = nn.Linear(model_dim, num_outputs)

    def forward(self, o: torch.Tensor) -> torch.Tensor:
        return self.projection(o)
