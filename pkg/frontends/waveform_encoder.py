"""
Baseline waveform front-end: seven strided 1-D convolutions turning 16 kHz
samples into 20 ms latent frames.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from core.errors import InputTooShortError
from core.recording import RecordedForwardMixin
from signal_frontend.dsp import SAMPLE_RATE, FeatureKind, FeatureSequence, Waveform

from frontends.init import kaiming_uniform_init_


@dataclass(frozen=True)
class ConvLayerSpec:
    channels: int
    kernel: int
    stride: int

    def output_length(self, length: int) -> int:
        if length < self.kernel:
            return 0
        return (length - self.kernel) // self.stride + 1


def _standard_layers(channels: int = 512) -> List[ConvLayerSpec]:
    kernels = (10, 3, 3, 3, 3, 2, 2)
    strides = (5, 2, 2, 2, 2, 2, 2)
    return [ConvLayerSpec(channels, k, s) for k, s in zip(kernels, strides)]


@dataclass
class WaveformEncoderConfig:
    layers: List[ConvLayerSpec] = field(default_factory=_standard_layers)
    conv_bias: bool = False
    frameshift_ms: int = 20

    def __post_init__(self):
        hop = int(np.prod([layer.stride for layer in self.layers]))
        if hop * 1000 != self.frameshift_ms * SAMPLE_RATE:
            raise ValueError(f"stride product {hop} samples is not {self.frameshift_ms} ms at {SAMPLE_RATE} Hz")

    @classmethod
    def standard(cls, channels: int = 512, conv_bias: bool = False) -> "WaveformEncoderConfig":
        return cls(layers=_standard_layers(channels), conv_bias=conv_bias)

    @property
    def output_dim(self) -> int:
        return self.layers[-1].channels

    @property
    def receptive_field(self) -> int:
        """Samples needed to produce one output frame"""
        field_size = 1
        for layer in reversed(self.layers):
            field_size = (field_size - 1) * layer.stride + layer.kernel
        return field_size

    def output_length(self, num_samples: int) -> int:
        length = num_samples
        for layer in self.layers:
            length = layer.output_length(length)
        return length


class WaveformEncoder(RecordedForwardMixin, nn.Module):
    """(B, N) samples -> (B, T, C) latents at 20 ms"""

    def __init__(self, config: Optional[WaveformEncoderConfig] = None):
        super().__init__()
        self.config = config or WaveformEncoderConfig.standard()
        convs = []
        in_channels = 1
        for spec in self.config.layers:
            convs.append(nn.Conv1d(in_channels, spec.channels, spec.kernel, spec.stride, bias=self.config.conv_bias))
            in_channels = spec.channels
        self.convs = nn.ModuleList(convs)
        first = self.config.layers[0].channels
        self.norm = nn.GroupNorm(first, first, affine=True)
        kaiming_uniform_init_(self)

    @property
    def frameshift_ms(self) -> int:
        return self.config.frameshift_ms

    @property
    def output_dim(self) -> int:
        return self.config.output_dim

    def output_lengths(self, num_samples: torch.Tensor) -> torch.Tensor:
        lengths = num_samples.clone()
        for spec in self.config.layers:
            lengths = torch.clamp((lengths - spec.kernel) // spec.stride + 1, min=0)
        return lengths

    def forward(self, samples: torch.Tensor) -> torch.Tensor:
        if samples.shape[-1] < self.config.receptive_field:
            raise InputTooShortError("input too short for receptive field")
        x = samples.unsqueeze(1)
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i == 0:
                x = self.norm(x)
            x = F.gelu(x)
        out = x.transpose(1, 2)
        self.record_forward(samples, out)
        return out


def waveform_encode(w: Waveform, encoder: WaveformEncoder) -> FeatureSequence:
    dtype = next(encoder.parameters()).dtype
    samples = torch.as_tensor(w.samples, dtype=dtype).unsqueeze(0)
    with torch.no_grad():
        out = encoder(samples)[0]
    return FeatureSequence(out.cpu().numpy(), encoder.frameshift_ms, FeatureKind.LATENT)


def conv_stack_lengths(config: WaveformEncoderConfig, num_samples: int) -> Tuple[int, ...]:
    """Per-layer output lengths, handy for inspecting the length composition"""
    lengths = []
    length = num_samples
    for layer in config.layers:
        length = layer.output_length(length)
        lengths.append(length)
    return tuple(lengths)
