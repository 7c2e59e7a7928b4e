"""
Pre-LN Transformer encoder with intermediate-layer taps.

Attention is written out (rather than nn.MultiheadAttention) so the weights
can be returned and the operation counts reported to the profiler.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from core.errors import NoForwardPassError, NonFiniteFeaturesError
from core.recording import GradientSet, RecordedForwardMixin
from frontends.init import kaiming_uniform_init_
from profiler.timing import OperationCounter
from signal_frontend.dsp import FeatureSequence


@dataclass
class EncoderConfig:
    num_layers: int = 4
    model_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 256
    ils_layers: List[int] = field(default_factory=list)
    positional: bool = True
    input_dim: Optional[int] = None

    def __post_init__(self):
        if self.model_dim % self.num_heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")
        bad = [l for l in self.ils_layers if not 1 <= l <= self.num_layers]
        if bad:
            raise ValueError(f"ils_layers {bad} outside [1, {self.num_layers}]")

    @classmethod
    def from_config(cls, section, input_dim: Optional[int] = None) -> "EncoderConfig":
        return cls(num_layers=section.num_layers, model_dim=section.model_dim, num_heads=section.num_heads,
                   ffn_dim=section.ffn_dim, ils_layers=list(section.ils_layers),
                   positional=section.positional, input_dim=input_dim)

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


@dataclass
class EncoderOutput:
    top: torch.Tensor
    taps: Dict[int, torch.Tensor] = field(default_factory=dict)
    attention: List[torch.Tensor] = field(default_factory=list)
    padding_mask: Optional[torch.Tensor] = None

    def layer(self, index: int) -> torch.Tensor:
        return self.taps[index]

    def all_finite(self) -> bool:
        return all(bool(torch.isfinite(t).all()) for t in [self.top, *self.taps.values()])


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    position = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div)[:, : dim // 2]
    return table.to(dtype)


class SelfAttention(nn.Module):
    def __init__(self, model_dim: int, num_heads: int, counter: Optional[OperationCounter] = None):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = model_dim // num_heads
        self.qkv = nn.Linear(model_dim, 3 * model_dim)
        self.out = nn.Linear(model_dim, model_dim)
        self.counter = counter

    def forward(self, x: torch.Tensor, padding_mask: Optional[torch.Tensor] = None):
        batch, length, dim = x.shape
        q, k, v = self.qkv(x).split(dim, dim=-1)
        q, k, v = (t.view(batch, length, self.num_heads, self.head_dim).transpose(1, 2) for t in (q, k, v))

        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if padding_mask is not None:
            scores = scores.masked_fill(padding_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        context = (weights @ v).transpose(1, 2).reshape(batch, length, dim)

        if self.counter is not None:
            # QK^T and AV, one multiply-add each
            self.counter.add("attention_flops", 4 * batch * length * length * dim)
            self.counter.add("dense_flops", 2 * batch * length * dim * 4 * dim)
        return self.out(context), weights


class EncoderLayer(nn.Module):
    def __init__(self, config: EncoderConfig, counter: Optional[OperationCounter] = None):
        super().__init__()
        self.attn_norm = nn.LayerNorm(config.model_dim)
        self.attn = SelfAttention(config.model_dim, config.num_heads, counter)
        self.ffn_norm = nn.LayerNorm(config.model_dim)
        self.ffn_in = nn.Linear(config.model_dim, config.ffn_dim)
        self.ffn_out = nn.Linear(config.ffn_dim, config.model_dim)
        self.counter = counter

    def forward(self, x: torch.Tensor, padding_mask: Optional[torch.Tensor] = None):
        attended, weights = self.attn(self.attn_norm(x), padding_mask)
        x = x + attended
        x = x + self.ffn_out(F.gelu(self.ffn_in(self.ffn_norm(x))))
        if self.counter is not None:
            self.counter.add("dense_flops", 2 * x.shape[0] * x.shape[1] * 2 * x.shape[2] * self.ffn_in.out_features)
        return x, weights


class TransformerEncoder(RecordedForwardMixin, nn.Module):
    def __init__(self, config: EncoderConfig, counter: Optional[OperationCounter] = None):
        super().__init__()
        self.config = config
        self.counter = counter
        in_dim = config.input_dim or config.model_dim
        self.input_proj = nn.Linear(in_dim, config.model_dim) if in_dim != config.model_dim else nn.Identity()
        self.layers = nn.ModuleList(EncoderLayer(config, counter) for _ in range(config.num_layers))
        self.final_norm = nn.LayerNorm(config.model_dim)
        kaiming_uniform_init_(self)

    def forward(self, x: torch.Tensor, padding_mask: Optional[torch.Tensor] = None,
                taps: Optional[Sequence[int]] = None, keep_attention: bool = False) -> EncoderOutput:
        """x (B, T, input_dim); padding_mask (B, T), True on padded frames"""
        if not torch.isfinite(x).all():
            raise NonFiniteFeaturesError()
        taps = self.config.ils_layers if taps is None else list(taps)

        h = self.input_proj(x)
        if self.config.positional:
            h = h + sinusoidal_positions(h.shape[1], h.shape[2], h.dtype).to(h.device)

        tapped, attention = {}, []
        for index, layer in enumerate(self.layers, start=1):
            h, weights = layer(h, padding_mask)
            if index in taps:
                tapped[index] = h
            if keep_attention:
                attention.append(weights)
        output = EncoderOutput(self.final_norm(h), tapped, attention, padding_mask)
        self._recorded_taps = sorted(tapped)
        self.record_forward(x, [output.top, *(tapped[l] for l in self._recorded_taps)])
        return output


def encode(f: FeatureSequence, encoder: TransformerEncoder, keep_attention: bool = False) -> EncoderOutput:
    frames = np.asarray(f.frames)
    if not np.all(np.isfinite(frames)):
        raise NonFiniteFeaturesError()
    dtype = next(encoder.parameters()).dtype
    return encoder(torch.as_tensor(frames, dtype=dtype).unsqueeze(0), keep_attention=keep_attention)


def encode_backward(encoder: TransformerEncoder, upstream: Mapping[object, torch.Tensor]) -> GradientSet:
    """Parameter and input gradients of the recorded forward.

    `upstream` maps "top" and/or tapped layer indices to gradients of the
    corresponding outputs; outputs left out receive zero gradient."""
    if not encoder.has_recording:
        raise NoForwardPassError()
    keys = ["top", *encoder._recorded_taps]
    grads = [upstream.get(key, torch.zeros_like(out)) for key, out in zip(keys, encoder._recorded_outputs)]
    return encoder.param_gradients(grads)
