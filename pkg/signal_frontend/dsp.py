"""
Deterministic DSP: STFT, log-mel filterbank (Fbank), 39-dim MFCC and CMVN
at a 10 ms base frameshift for 16 kHz audio.
"""

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np
from scipy.fftpack import dct
from scipy.signal import get_window

from core.errors import InputTooShortError, TooFewFramesError

SAMPLE_RATE = 16000
FRAMESHIFTS_MS = (10, 20, 40, 80)


class FeatureKind(str, Enum):
    FBANK = "fbank"
    MFCC = "mfcc"
    LATENT = "latent"


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("waveform must be mono (1-D samples)")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"expected {SAMPLE_RATE} Hz audio, got {self.sample_rate} Hz")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class FeatureSequence:
    """Time-major T x D feature matrix annotated with its frameshift"""

    frames: np.ndarray
    frameshift_ms: int
    kind: FeatureKind

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2:
            raise ValueError("features must be a T x D matrix")
        if self.frameshift_ms not in FRAMESHIFTS_MS:
            raise ValueError(f"frameshift {self.frameshift_ms} ms not in {FRAMESHIFTS_MS}")
        self.kind = FeatureKind(self.kind)
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("features contain non-finite values")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def replace(self, frames: np.ndarray) -> "FeatureSequence":
        return FeatureSequence(frames, self.frameshift_ms, self.kind)


@dataclass(frozen=True)
class DspParams:
    window_ms: int = 25
    hop_ms: int = 10
    n_fft: int = 512
    n_mels: int = 80
    log_floor: float = 1e-10
    cmvn_var_floor: float = 1e-8
    n_ceps: int = 13
    mfcc_mels: int = 40
    delta_window: int = 2

    @property
    def window_samples(self) -> int:
        return SAMPLE_RATE * self.window_ms // 1000

    @property
    def hop_samples(self) -> int:
        return SAMPLE_RATE * self.hop_ms // 1000

    @classmethod
    def from_config(cls, features: Any) -> "DspParams":
        """Build from a FeaturesSection (or any object with the same attributes)"""
        return cls(**{k: getattr(features, k) for k in cls.__dataclass_fields__ if hasattr(features, k)})

    def to_dict(self) -> Dict[str, Any]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def digest(self) -> bytes:
        """8-byte fingerprint of the extraction parameters; CMVN happens after
        loading and is left out"""
        fields = {k: v for k, v in self.to_dict().items() if k != "cmvn_var_floor"}
        return hashlib.sha256(json.dumps(fields, sort_keys=True).encode()).digest()[:8]

    def feature_dim(self, kind: "FeatureKind") -> int:
        kind = FeatureKind(kind)
        if kind is FeatureKind.FBANK:
            return self.n_mels
        if kind is FeatureKind.MFCC:
            return 3 * self.n_ceps
        raise ValueError(f"{kind.value} features have no DSP dimension")


DEFAULT_PARAMS = DspParams()


def frame_count(num_samples: int, window_samples: int, hop_samples: int) -> int:
    """Frames of a waveform framed without padding; 0 if shorter than one window"""
    if num_samples < window_samples:
        return 0
    return 1 + (num_samples - window_samples) // hop_samples


def stft(w: Waveform, window_ms: int = 25, hop_ms: int = 10, n_fft: int = 512) -> np.ndarray:
    """Hann-windowed STFT, T x (n_fft/2 + 1) complex"""
    if window_ms < hop_ms:
        raise ValueError("window must be at least as long as the hop")
    win = SAMPLE_RATE * window_ms // 1000
    hop = SAMPLE_RATE * hop_ms // 1000
    if win > n_fft:
        raise ValueError(f"window of {win} samples exceeds FFT size {n_fft}")
    if len(w) < win:
        raise InputTooShortError()

    frames = np.lib.stride_tricks.sliding_window_view(w.samples, win)[::hop]
    window = get_window("hann", win)
    return np.fft.rfft(frames * window, n=n_fft, axis=1)


def _hz_to_mel(freq):
    return 2595.0 * np.log10(1.0 + np.asarray(freq, dtype=np.float64) / 700.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int = SAMPLE_RATE,
                   f_min: float = 0.0, f_max: Optional[float] = None) -> np.ndarray:
    """Triangular mel filters evaluated at the FFT bin frequencies, (n_fft/2+1) x n_mels"""
    f_max = f_max or sample_rate / 2
    mel_points = np.linspace(_hz_to_mel(f_min), _hz_to_mel(f_max), n_mels + 2)
    bin_mels = _hz_to_mel(np.arange(n_fft // 2 + 1) * sample_rate / n_fft)

    f_diff = mel_points[1:] - mel_points[:-1]
    slopes = mel_points[np.newaxis, :] - bin_mels[:, np.newaxis]
    down_slopes = -slopes[:, :-2] / f_diff[:-1]
    up_slopes = slopes[:, 2:] / f_diff[1:]
    return np.maximum(0.0, np.minimum(down_slopes, up_slopes))


def log_mel(w: Waveform, n_mels: int, params: DspParams = DEFAULT_PARAMS) -> np.ndarray:
    spec = stft(w, params.window_ms, params.hop_ms, params.n_fft)
    power = np.abs(spec) ** 2 / params.n_fft
    energies = power @ mel_filterbank(n_mels, params.n_fft)
    return np.log(np.maximum(energies, params.log_floor))


def fbank(w: Waveform, params: DspParams = DEFAULT_PARAMS) -> FeatureSequence:
    return FeatureSequence(log_mel(w, params.n_mels, params), params.hop_ms, FeatureKind.FBANK)


def cepstra(log_mel_energies: np.ndarray, n_ceps: int = 13) -> np.ndarray:
    """Orthonormal type-II DCT of each log-mel row, first n_ceps coefficients"""
    return dct(log_mel_energies, type=2, axis=1, norm="ortho")[:, :n_ceps]


def deltas(features: np.ndarray, window: int = 2) -> np.ndarray:
    """Regression deltas over +-window frames with edge frames replicated"""
    num_frames = features.shape[0]
    padded = np.pad(features, ((window, window), (0, 0)), mode="edge")
    denom = 2 * sum(n * n for n in range(1, window + 1))
    out = np.zeros_like(features, dtype=np.float64)
    for n in range(1, window + 1):
        out += n * (padded[window + n:window + n + num_frames] - padded[window - n:window - n + num_frames])
    return out / denom


def mfcc39(w: Waveform, params: DspParams = DEFAULT_PARAMS) -> FeatureSequence:
    ceps = cepstra(log_mel(w, params.mfcc_mels, params), params.n_ceps)
    d1 = deltas(ceps, params.delta_window)
    d2 = deltas(d1, params.delta_window)
    return FeatureSequence(np.hstack([ceps, d1, d2]), params.hop_ms, FeatureKind.MFCC)


def cmvn(f: FeatureSequence, var_floor: float = 1e-8) -> FeatureSequence:
    """Per-utterance mean/variance normalization of every feature dimension"""
    if f.num_frames < 2:
        raise TooFewFramesError()
    frames = f.frames.astype(np.float64)
    mean = frames.mean(axis=0)
    var = np.maximum(frames.var(axis=0), var_floor)
    return f.replace((frames - mean) / np.sqrt(var))


def extract(w: Waveform, kind: FeatureKind, params: DspParams = DEFAULT_PARAMS) -> FeatureSequence:
    kind = FeatureKind(kind)
    if kind is FeatureKind.FBANK:
        return fbank(w, params)
    if kind is FeatureKind.MFCC:
        return mfcc39(w, params)
    raise ValueError(f"{kind.value} features are produced by a front-end, not the DSP pipeline")
