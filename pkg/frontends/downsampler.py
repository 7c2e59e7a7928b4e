"""
Conv + GLU downsampler: 10 ms Fbank frames to 20 / 40 / 80 ms latents.

One Conv1d(kernel 2, stride 2) per octave; each conv emits 2k channels and a
GLU gates them back to k.
"""

import math
from dataclasses import dataclass
from typing import List

import torch
from torch import nn

from core.errors import FrameshiftMismatchError
from core.recording import RecordedForwardMixin
from signal_frontend.dsp import FeatureKind, FeatureSequence

from frontends.init import kaiming_uniform_init_
from frontends.waveform_encoder import ConvLayerSpec

BASE_FRAMESHIFT_MS = 10
TARGET_FRAMESHIFTS_MS = (20, 40, 80)


@dataclass(frozen=True)
class DownsamplerConfig:
    target_frameshift_ms: int = 20
    input_dim: int = 80
    channels: int = 64
    kernel: int = 2
    stride: int = 2

    def __post_init__(self):
        if self.target_frameshift_ms not in TARGET_FRAMESHIFTS_MS:
            raise ValueError(f"target frameshift must be one of {TARGET_FRAMESHIFTS_MS}")
        if self.stride != 2:
            raise ValueError("downsampler layers halve the frame rate (stride 2)")

    @property
    def factor(self) -> int:
        return self.target_frameshift_ms // BASE_FRAMESHIFT_MS

    @property
    def num_layers(self) -> int:
        return int(math.log2(self.factor))

    @property
    def layers(self) -> List[ConvLayerSpec]:
        return [ConvLayerSpec(self.channels, self.kernel, self.stride) for _ in range(self.num_layers)]

    def output_length(self, num_frames: int) -> int:
        for layer in self.layers:
            num_frames = layer.output_length(num_frames)
        return num_frames


class ConvGLUDownsampler(RecordedForwardMixin, nn.Module):
    """(B, T, D) Fbank at 10 ms -> (B, T', channels) at the target frameshift"""

    def __init__(self, config: DownsamplerConfig):
        super().__init__()
        self.config = config
        convs = []
        in_channels = config.input_dim
        for spec in config.layers:
            convs.append(nn.Conv1d(in_channels, 2 * spec.channels, spec.kernel, spec.stride))
            in_channels = spec.channels
        self.convs = nn.ModuleList(convs)
        self.glu = nn.GLU(dim=1)
        kaiming_uniform_init_(self)

    @property
    def frameshift_ms(self) -> int:
        return self.config.target_frameshift_ms

    @property
    def output_dim(self) -> int:
        return self.config.channels

    def output_lengths(self, num_frames: torch.Tensor) -> torch.Tensor:
        lengths = num_frames.clone()
        for spec in self.config.layers:
            lengths = torch.clamp((lengths - spec.kernel) // spec.stride + 1, min=0)
        return lengths

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        x = frames.transpose(1, 2)
        for conv in self.convs:
            x = self.glu(conv(x))
        out = x.transpose(1, 2)
        self.record_forward(frames, out)
        return out


def downsample(f: FeatureSequence, downsampler: ConvGLUDownsampler) -> FeatureSequence:
    if f.frameshift_ms != BASE_FRAMESHIFT_MS:
        raise FrameshiftMismatchError("downsampler expects base-rate Fbank")
    dtype = next(downsampler.parameters()).dtype
    frames = torch.as_tensor(f.frames, dtype=dtype).unsqueeze(0)
    with torch.no_grad():
        out = downsampler(frames)[0]
    return FeatureSequence(out.cpu().numpy(), downsampler.frameshift_ms, FeatureKind.LATENT)
