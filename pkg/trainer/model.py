"""
Pre-training and fine-tuning models assembled from a run config.

Pre-masking samples spans on the 10 ms spectrogram and projects them onto the
encoder rate; post-masking samples at the front-end output rate and swaps in
the learnable mask embedding.
"""

from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from core.errors import EmptyMaskError
from encoder.transformer import EncoderConfig, EncoderOutput, TransformerEncoder
from finetune.ctc import CtcHead
from frontends.base import build_frontend
from frontends.downsampler import BASE_FRAMESHIFT_MS
from masking.spans import MaskEmbedding, pre_mask, project_mask_tensor, sample_mask_batch
from pretrain_losses.losses import LossReport, PretrainHeads, ils_loss
from profiler.timing import OperationCounter
from trainer.data import Batch

MAX_MASK_ATTEMPTS = 100


def padding_mask(lengths: torch.Tensor, max_len: int) -> torch.Tensor:
    """(B, max_len) bool, True beyond each length"""
    return torch.arange(max_len, device=lengths.device)[None, :] >= lengths[:, None]


class SpeechBackbone(nn.Module):
    """Front-end, optional mask embedding and Transformer encoder"""

    def __init__(self, config, counter: Optional[OperationCounter] = None):
        super().__init__()
        self.placement = config.masking.placement
        self.frontend = build_frontend(config)
        self.encoder = TransformerEncoder(
            EncoderConfig.from_config(config.encoder, input_dim=self.frontend.output_dim), counter)
        self.mask_embedding = MaskEmbedding(self.frontend.output_dim) if self.placement == "post" else None
        self.factor = 1
        if config.frontend.kind == "fbank":
            self.factor = config.frontend.frameshift_ms // BASE_FRAMESHIFT_MS

    def mask_lengths(self, batch: Batch) -> Tuple[List[int], int]:
        """Per-utterance lengths at the masking rate, and the padded length"""
        if self.placement == "pre":
            return batch.input_lengths.tolist(), batch.inputs.shape[1]
        lengths = batch.num_frames.tolist()
        return lengths, max(lengths)

    def sample_masks(self, batch: Batch, span_start_prob: float, span_len: int,
                     rng: np.random.Generator, require_any: bool = True) -> torch.Tensor:
        """Masking-rate mask. With require_any it is redrawn from the same
        generator until some frame of the batch is masked at the encoder rate"""
        lengths, max_len = self.mask_lengths(batch)
        for _ in range(MAX_MASK_ATTEMPTS):
            masked = torch.from_numpy(sample_mask_batch(lengths, max_len, span_start_prob, span_len, rng))
            if not require_any or bool(self.encoder_mask(masked, batch.num_frames).any()):
                return masked
        raise EmptyMaskError(f"empty mask after {MAX_MASK_ATTEMPTS} draws "
                             f"(span_start_prob={span_start_prob})")

    def encoder_mask(self, masked: torch.Tensor, num_frames: torch.Tensor) -> torch.Tensor:
        max_frames = int(num_frames.max())
        if self.placement == "pre":
            masked = project_mask_tensor(masked, self.factor, max_frames)
        else:
            masked = masked[:, :max_frames]
        return masked & ~padding_mask(num_frames, max_frames)

    def features(self, batch: Batch, masked: Optional[torch.Tensor]) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        """Front-end latents (B, T, C) with masking applied, and the encoder-rate mask"""
        inputs = batch.inputs
        if masked is not None and self.placement == "pre":
            inputs = pre_mask(inputs, masked)
        latents = self.frontend(inputs)[:, :int(batch.num_frames.max())]
        if masked is None:
            return latents, None
        if self.placement == "post":
            latents = self.mask_embedding(latents, masked[:, :latents.shape[1]])
        return latents, self.encoder_mask(masked, batch.num_frames)[:, :latents.shape[1]]

    def encode(self, latents: torch.Tensor, num_frames: torch.Tensor,
               taps: Optional[Sequence[int]] = None) -> EncoderOutput:
        return self.encoder(latents, padding_mask(num_frames, latents.shape[1]), taps=taps)


class PretrainModel(nn.Module):
    def __init__(self, config, counter: Optional[OperationCounter] = None):
        super().__init__()
        self.backbone = SpeechBackbone(config, counter)
        self.heads = PretrainHeads.build(
            config.loss.kind, config.encoder.model_dim, config.labels.num_classes,
            config.encoder.ils_layers, config.loss.temperature, config.loss.codebook_dim)

    def loss(self, outputs: EncoderOutput, masked: torch.Tensor, labels: torch.Tensor) -> LossReport:
        return ils_loss(outputs, masked, labels[:, :masked.shape[1]], self.heads)


class FinetuneModel(nn.Module):
    def __init__(self, config, num_outputs: int, counter: Optional[OperationCounter] = None):
        super().__init__()
        self.backbone = SpeechBackbone(config, counter)
        self.ctc_head = CtcHead(config.encoder.model_dim, num_outputs)

    def pretrained_parameters(self) -> Iterable[nn.Parameter]:
        return self.backbone.parameters()

    def logits(self, batch: Batch, masked: Optional[torch.Tensor] = None, frozen: bool = False) -> torch.Tensor:
        """(B, T, V+1); with frozen=True the backbone runs without autograd"""
        with torch.set_grad_enabled(torch.is_grad_enabled() and not frozen):
            latents, _ = self.backbone.features(batch, masked)
            top = self.backbone.encode(latents, batch.num_frames, taps=[]).top
        return self.ctc_head(top)


def accumulate_backward(weighted_losses: Sequence[Tuple[torch.Tensor, int]]) -> float:
    """Backward of sum(loss_i * n_i) / sum(n_i) over micro-batches whose losses
    are means over n_i items; equals one step on the concatenated batch"""
    total = sum(n for _, n in weighted_losses)
    if total == 0:
        raise EmptyMaskError("no items to average over")
    loss = sum(l * (n / total) for l, n in weighted_losses)
    loss.backward()
    return float(loss.detach())


def load_backbone_state(model: nn.Module, state: dict):
    """Copy pre-trained backbone weights; prediction heads are left behind"""
    prefix = "backbone."
    backbone = {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}
    model.backbone.load_state_dict(backbone)


def parameter_drift(before: Sequence[torch.Tensor], after: Iterable[nn.Parameter]) -> float:
    """L2 norm of the change across a parameter group"""
    squared = sum(float(((a.detach() - b) ** 2).sum()) for b, a in zip(before, after))
    return squared ** 0.5
