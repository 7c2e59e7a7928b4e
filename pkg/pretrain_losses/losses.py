"""
Masked-prediction pre-training losses.

hubert_loss: softmax over temperature-scaled cosine similarities between the
projected hidden state A o_t and a learnable embedding per cluster.
ce_loss: plain softmax cross-entropy over logits A o_t / tau.

Both are averaged over masked frames only. ils_loss adds the same loss,
computed by a separate head, at every tapped intermediate layer.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Union

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from core.errors import EmptyMaskError, HeadConfigurationError
from labeler.labels import LabelSequence

COSINE_EPS = 1e-8
TOP = "top"

Projection = Union[torch.Tensor, nn.Module]


@dataclass
class LossReport:
    loss: torch.Tensor
    masked_frames: int
    correct: int = 0
    tap_losses: Dict[object, float] = field(default_factory=dict)

    @property
    def value(self) -> float:
        return float(self.loss.detach())

    @property
    def accuracy(self) -> Optional[float]:
        if self.masked_frames == 0:
            return None
        return self.correct / self.masked_frames


def _as_tensor(x, like: torch.Tensor, dtype=None) -> torch.Tensor:
    if isinstance(x, LabelSequence):
        x = x.ids
    if isinstance(x, torch.Tensor):
        return x.to(like.device)
    return torch.as_tensor(np.asarray(x), device=like.device, dtype=dtype)


def _masked_rows(o: torch.Tensor, masked, labels):
    masked = _as_tensor(masked, o, torch.bool).bool()
    labels = _as_tensor(labels, o, torch.long).long()
    if masked.shape != o.shape[:-1] or labels.shape != o.shape[:-1]:
        raise ValueError(f"mask {tuple(masked.shape)} and labels {tuple(labels.shape)} must match "
                         f"hidden states {tuple(o.shape[:-1])}")
    if not bool(masked.any()):
        raise EmptyMaskError()
    return o[masked], labels[masked]


def _project(o: torch.Tensor, projection: Projection) -> torch.Tensor:
    if isinstance(projection, nn.Module):
        return projection(o)
    return o @ projection.transpose(0, 1)


def hubert_logits(projected: torch.Tensor, embeddings: torch.Tensor, temperature: float) -> torch.Tensor:
    """(N, K) x (C, K) -> (N, C) cosine similarities / tau"""
    sims = F.cosine_similarity(projected.unsqueeze(1), embeddings.unsqueeze(0), dim=-1, eps=COSINE_EPS)
    return sims / temperature


def _report(logits: torch.Tensor, targets: torch.Tensor) -> LossReport:
    loss = F.cross_entropy(logits, targets, reduction="mean")
    with torch.no_grad():
        correct = int((logits.argmax(dim=-1) == targets).sum())
    return LossReport(loss, len(targets), correct, {TOP: float(loss.detach())})


def hubert_loss(o: torch.Tensor, masked, labels, embeddings: torch.Tensor, projection: Projection,
                temperature: float = 0.1) -> LossReport:
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    rows, targets = _masked_rows(o, masked, labels)
    return _report(hubert_logits(_project(rows, projection), embeddings, temperature), targets)


def ce_loss(o: torch.Tensor, masked, labels, projection: Projection, temperature: float = 0.1) -> LossReport:
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    rows, targets = _masked_rows(o, masked, labels)
    return _report(_project(rows, projection) / temperature, targets)


def masked_accuracy(logits: torch.Tensor, masked, labels) -> Optional[float]:
    """Argmax agreement over masked frames; None when nothing is masked"""
    try:
        rows, targets = _masked_rows(logits, masked, labels)
    except EmptyMaskError:
        return None
    return float((rows.argmax(dim=-1) == targets).double().mean())


class CodebookEmbeddings(nn.Module):
    def __init__(self, num_classes: int, dim: int, temperature: float = 0.1):
        super().__init__()
        if temperature <= 0:
            raise ValueError("temperature must be > 0")
        self.weight = nn.Parameter(torch.empty(num_classes, dim).uniform_(-1.0 / math.sqrt(dim),
                                                                          1.0 / math.sqrt(dim)))
        self.temperature = temperature

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]


class HubertHead(nn.Module):
    """A: model_dim -> K projection plus the per-cluster embeddings"""

    def __init__(self, model_dim: int, num_classes: int, codebook_dim: int = 256, temperature: float = 0.1):
        super().__init__()
        self.projection = nn.Linear(model_dim, codebook_dim, bias=False)
        self.codebook = CodebookEmbeddings(num_classes, codebook_dim, temperature)

    def logits(self, o: torch.Tensor) -> torch.Tensor:
        return hubert_logits(self.projection(o), self.codebook.weight, self.codebook.temperature)

    def forward(self, o: torch.Tensor, masked, labels) -> LossReport:
        return hubert_loss(o, masked, labels, self.codebook.weight, self.projection, self.codebook.temperature)


class CeHead(nn.Module):
    """A: model_dim -> C projection"""

    def __init__(self, model_dim: int, num_classes: int, temperature: float = 0.1):
        super().__init__()
        if temperature <= 0:
            raise ValueError("temperature must be > 0")
        self.projection = nn.Linear(model_dim, num_classes, bias=False)
        self.temperature = temperature

    def logits(self, o: torch.Tensor) -> torch.Tensor:
        return self.projection(o) / self.temperature

    def forward(self, o: torch.Tensor, masked, labels) -> LossReport:
        return ce_loss(o, masked, labels, self.projection, self.temperature)


def build_head(kind: str, model_dim: int, num_classes: int, temperature: float = 0.1,
               codebook_dim: int = 256) -> nn.Module:
    if num_classes < 2:
        raise HeadConfigurationError(f"{kind} loss needs at least 2 classes, got {num_classes}")
    if kind == "hubert":
        return HubertHead(model_dim, num_classes, codebook_dim, temperature)
    if kind == "ce":
        return CeHead(model_dim, num_classes, temperature)
    raise HeadConfigurationError(f"unknown loss kind {kind!r}")


class PretrainHeads(nn.ModuleDict):
    """Top-layer head plus one independent head per ILS tap"""

    @classmethod
    def build(cls, kind: str, model_dim: int, num_classes: int, ils_layers=(), temperature: float = 0.1,
              codebook_dim: int = 256) -> "PretrainHeads":
        heads = cls()
        heads[TOP] = build_head(kind, model_dim, num_classes, temperature, codebook_dim)
        for layer in ils_layers:
            heads[str(layer)] = build_head(kind, model_dim, num_classes, temperature, codebook_dim)
        return heads

    def head_for(self, tap: object) -> nn.Module:
        key = str(tap)
        if key not in self:
            raise HeadConfigurationError(f"no prediction head configured for layer {tap}")
        return self[key]


def ils_loss(outputs, masked, labels, heads: Mapping) -> LossReport:
    """Unweighted sum of the top-layer loss and every tapped layer's loss.

    `heads` maps "top" and tap indices (int or str) to heads."""
    lookup = heads.head_for if isinstance(heads, PretrainHeads) else _mapping_lookup(heads)
    top = lookup(TOP)(outputs.top, masked, labels)
    total, tap_losses = top.loss, {TOP: top.value}
    for layer in sorted(outputs.taps):
        report = lookup(layer)(outputs.taps[layer], masked, labels)
        total = total + report.loss
        tap_losses[layer] = report.value
    return LossReport(total, top.masked_frames, top.correct, tap_losses)


def _mapping_lookup(heads: Mapping):
    def lookup(tap):
        for key in (tap, str(tap)):
            if key in heads:
                return heads[key]
        raise HeadConfigurationError(f"no prediction head configured for layer {tap}")
    return lookup
