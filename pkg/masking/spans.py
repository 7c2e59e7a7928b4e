"""
Span masking.

Every frame is independently chosen as a span start with probability
span_start_prob; each start masks span_len consecutive frames, spans may
overlap and are clipped at the sequence end. Post-masking swaps masked
front-end latents for a learnable embedding; pre-masking fills masked 10 ms
spectrogram frames with a constant before the downsampler runs.
"""

from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from core.errors import FrameshiftMismatchError, MaskDimensionError, MaskLengthError
from signal_frontend.dsp import FeatureSequence

PROJECTION_FACTORS = (2, 4, 8)


@dataclass
class MaskPlan:
    masked: np.ndarray
    spans: List[Tuple[int, int]] = field(default_factory=list)
    span_start_prob: float = 0.0
    span_len: int = 1

    def __post_init__(self):
        self.masked = np.asarray(self.masked, dtype=bool)

    def __len__(self) -> int:
        return len(self.masked)

    @property
    def num_masked(self) -> int:
        return int(self.masked.sum())

    @property
    def coverage(self) -> float:
        return self.num_masked / len(self.masked) if len(self.masked) else 0.0

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.masked)

    @classmethod
    def empty(cls, length: int) -> "MaskPlan":
        return cls(np.zeros(length, dtype=bool))

    @classmethod
    def full(cls, length: int) -> "MaskPlan":
        return cls(np.ones(length, dtype=bool), [(0, length)] if length else [], 1.0, max(length, 1))


def sample_mask_plan(num_frames: int, span_start_prob: float, span_len: int,
                     rng: np.random.Generator) -> MaskPlan:
    if not 0.0 <= span_start_prob <= 1.0:
        raise ValueError("span_start_prob must lie in [0, 1]")
    if span_len < 1:
        raise ValueError("span_len must be >= 1")
    if num_frames <= 0:
        return MaskPlan(np.zeros(0, dtype=bool), [], span_start_prob, span_len)

    starts = np.flatnonzero(rng.random(num_frames) < span_start_prob)
    ends = np.minimum(starts + span_len, num_frames)
    # +1 at each start, -1 at each end: a positive running sum means covered
    delta = np.zeros(num_frames + 1, dtype=np.int64)
    np.add.at(delta, starts, 1)
    np.add.at(delta, ends, -1)
    masked = np.cumsum(delta[:-1]) > 0
    spans = [(int(s), int(e - s)) for s, e in zip(starts, ends)]
    return MaskPlan(masked, spans, span_start_prob, span_len)


def expected_coverage(num_frames: int, span_start_prob: float, span_len: int) -> float:
    """Expected masked fraction of one sequence, edge effects included"""
    if num_frames <= 0:
        return 0.0
    reach = np.minimum(np.arange(num_frames) + 1, span_len)
    return float(np.mean(1.0 - (1.0 - span_start_prob) ** reach))


def corpus_mask_coverage(lengths: Iterable[int], span_start_prob: float, span_len: int,
                         rng: np.random.Generator) -> float:
    """Masked fraction pooled over one plan per utterance"""
    masked = total = 0
    for length in lengths:
        plan = sample_mask_plan(length, span_start_prob, span_len, rng)
        masked += plan.num_masked
        total += length
    return masked / total if total else 0.0


class MaskEmbedding(nn.Module):
    """Learnable vector substituted for post-masked frames"""

    def __init__(self, dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(dim).uniform_())

    @property
    def dim(self) -> int:
        return self.weight.shape[0]

    def forward(self, latents: torch.Tensor, masked: torch.Tensor) -> torch.Tensor:
        """latents (B, T, D), masked (B, T) bool"""
        if latents.shape[-1] != self.dim:
            raise MaskDimensionError()
        if masked.shape != latents.shape[:2]:
            raise MaskLengthError(f"mask of shape {tuple(masked.shape)} does not cover latents "
                                  f"of shape {tuple(latents.shape[:2])}")
        return torch.where(masked.unsqueeze(-1), self.weight.to(latents.dtype), latents)


def apply_post_mask(f: FeatureSequence, plan: MaskPlan, m: MaskEmbedding) -> FeatureSequence:
    if m.dim != f.dim:
        raise MaskDimensionError()
    if len(plan) != f.num_frames:
        raise MaskLengthError(f"plan covers {len(plan)} frames, features have {f.num_frames}")
    frames = np.array(f.frames, copy=True)
    frames[plan.masked] = m.weight.detach().cpu().numpy().astype(frames.dtype)
    return f.replace(frames)


def pre_mask(frames: torch.Tensor, masked: torch.Tensor, fill: float = 0.0) -> torch.Tensor:
    """frames (B, T, D) at 10 ms, masked (B, T) bool"""
    if masked.shape != frames.shape[:2]:
        raise MaskLengthError(f"mask of shape {tuple(masked.shape)} does not cover frames "
                              f"of shape {tuple(frames.shape[:2])}")
    return frames.masked_fill(masked.unsqueeze(-1), fill)


def apply_pre_mask(f: FeatureSequence, plan: MaskPlan, fill: float = 0.0) -> FeatureSequence:
    if f.frameshift_ms != 10:
        raise FrameshiftMismatchError("pre-masking runs on base-rate (10 ms) spectrogram frames")
    if len(plan) != f.num_frames:
        raise MaskLengthError(f"plan covers {len(plan)} frames, spectrogram has {f.num_frames}")
    frames = np.array(f.frames, copy=True)
    frames[plan.masked] = fill
    return f.replace(frames)


def project_mask(plan: MaskPlan, factor: int) -> MaskPlan:
    """Target frame i covers source frames [i*factor, (i+1)*factor); it is
    masked iff any of them is. A trailing partial window is dropped, as the
    downsampler drops it."""
    if factor not in PROJECTION_FACTORS:
        raise ValueError(f"projection factor must be one of {PROJECTION_FACTORS}")
    target_len = len(plan) // factor
    masked = plan.masked[:target_len * factor].reshape(target_len, factor).any(axis=1)
    spans = []
    for start, length in plan.spans:
        first, last = start // factor, min((start + length - 1) // factor, target_len - 1)
        if first <= last:
            spans.append((first, last - first + 1))
    return MaskPlan(masked, spans, plan.span_start_prob, plan.span_len)


def project_mask_tensor(masked: torch.Tensor, factor: int, target_len: int) -> torch.Tensor:
    """Batched any-source projection of a (B, T) mask onto target_len frames"""
    if factor == 1:
        return masked[:, :target_len]
    needed = target_len * factor
    if masked.shape[1] < needed:
        pad = masked.new_zeros(masked.shape[0], needed - masked.shape[1])
        masked = torch.cat([masked, pad], dim=1)
    return masked[:, :needed].reshape(masked.shape[0], target_len, factor).any(dim=2)


def sample_mask_batch(lengths: Sequence[int], max_len: int, span_start_prob: float, span_len: int,
                      rng: np.random.Generator) -> np.ndarray:
    """(B, max_len) bool mask, one independent plan per utterance; padding never masked"""
    batch = np.zeros((len(lengths), max_len), dtype=bool)
    for i, length in enumerate(lengths):
        batch[i, :length] = sample_mask_plan(int(length), span_start_prob, span_len, rng).masked
    return batch
