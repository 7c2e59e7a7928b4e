"""Front-end construction from a run config and the feature/label length contract."""

from typing import Tuple, Union

from core.errors import LengthMismatchError
from frontends.downsampler import ConvGLUDownsampler, DownsamplerConfig
from frontends.waveform_encoder import WaveformEncoder, WaveformEncoderConfig

Frontend = Union[WaveformEncoder, ConvGLUDownsampler]

MAX_LENGTH_MISMATCH = 2


def build_frontend(config) -> Frontend:
    """Front-end for a RunConfig; the Fbank downsampler emits model_dim channels"""
    if config.frontend.kind == "waveform":
        return WaveformEncoder(WaveformEncoderConfig.standard(config.frontend.conv_channels))
    return ConvGLUDownsampler(DownsamplerConfig(
        target_frameshift_ms=config.frontend.frameshift_ms,
        input_dim=config.features.n_mels,
        channels=config.encoder.model_dim,
    ))


def align_lengths(features, labels) -> Tuple:
    """Trim a feature matrix and a label vector to their shorter length"""
    t_feat, t_lab = len(features), len(labels)
    if abs(t_feat - t_lab) > MAX_LENGTH_MISMATCH:
        raise LengthMismatchError(
            f"features have {t_feat} frames but labels have {t_lab} "
            f"(more than {MAX_LENGTH_MISMATCH} apart)")
    t = min(t_feat, t_lab)
    return features[:t], labels[:t]


def expected_frames(num_samples: int, frontend_kind: str, frameshift_ms: int, hop_ms: int = 10,
                    window_ms: int = 25, sample_rate: int = 16000) -> int:
    """Encoder-rate frame count an utterance of num_samples will produce"""
    if frontend_kind == "waveform":
        return WaveformEncoderConfig.standard(1).output_length(num_samples)
    window = sample_rate * window_ms // 1000
    hop = sample_rate * hop_ms // 1000
    base = 0 if num_samples < window else 1 + (num_samples - window) // hop
    return DownsamplerConfig(target_frameshift_ms=frameshift_ms).output_length(base)

