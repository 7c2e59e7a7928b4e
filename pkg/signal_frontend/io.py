"""
Audio and feature-file I/O.

Feature container (little-endian):
    magic b"FHFT" | version u16 | T u32 | D u32 | frameshift_ms u16 | kind u8
    | params digest 8 bytes (all zero when unknown)
followed by T*D float32 values in row-major order.
"""

import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import aiofiles
import aiofiles.os
import numpy as np
import soundfile as sf

from core.errors import AudioFormatError, FeatureFormatError
from signal_frontend.dsp import SAMPLE_RATE, DspParams, FeatureKind, FeatureSequence, Waveform

logger = logging.getLogger("lab.signal_frontend.io")

FEATURE_MAGIC = b"FHFT"
FEATURE_VERSION = 2
NO_DIGEST = bytes(8)
_HEADER = struct.Struct("<4sHIIHB8s")
_KIND_CODES = {FeatureKind.FBANK: 0, FeatureKind.MFCC: 1, FeatureKind.LATENT: 2}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


def read_wav(path: Union[str, Path]) -> Waveform:
    """Read a mono 16-bit PCM WAV at 16 kHz"""
    try:
        info = sf.info(str(path))
    except RuntimeError as e:
        raise AudioFormatError(f"{path}: unreadable audio ({e})")
    if info.format != "WAV" or info.subtype != "PCM_16":
        raise AudioFormatError(f"{path}: expected 16-bit PCM WAV, got {info.format}/{info.subtype}")
    if info.channels != 1:
        raise AudioFormatError(f"{path}: expected mono audio, got {info.channels} channels")
    if info.samplerate != SAMPLE_RATE:
        raise AudioFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {info.samplerate} Hz")
    samples, _ = sf.read(str(path), dtype="float64")
    return Waveform(samples)


def write_wav(path: Union[str, Path], w: Waveform):
    sf.write(str(path), np.clip(w.samples, -1.0, 1.0), w.sample_rate, subtype="PCM_16", format="WAV")


def encode_features(f: FeatureSequence, params_digest: bytes = NO_DIGEST) -> bytes:
    header = _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, f.num_frames, f.dim,
                          f.frameshift_ms, _KIND_CODES[f.kind], params_digest)
    return header + np.ascontiguousarray(f.frames, dtype="<f4").tobytes()


@dataclass(frozen=True)
class FeatureHeader:
    num_frames: int
    dim: int
    frameshift_ms: int
    kind: FeatureKind
    params_digest: bytes

    @property
    def payload_size(self) -> int:
        return _HEADER.size + 4 * self.num_frames * self.dim


def _parse_header(payload: bytes) -> FeatureHeader:
    if len(payload) < _HEADER.size:
        raise FeatureFormatError("truncated feature header")
    magic, version, num_frames, dim, frameshift, kind, digest = _HEADER.unpack_from(payload)
    if magic != FEATURE_MAGIC:
        raise FeatureFormatError(f"bad feature magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FeatureFormatError(f"unsupported feature version {version}")
    if kind not in _CODE_KINDS:
        raise FeatureFormatError(f"unknown feature kind code {kind}")
    return FeatureHeader(num_frames, dim, frameshift, _CODE_KINDS[kind], digest)


def decode_features(payload: bytes) -> FeatureSequence:
    header = _parse_header(payload)
    if len(payload) != header.payload_size:
        raise FeatureFormatError(f"feature payload is {len(payload)} bytes, header implies {header.payload_size}")
    frames = np.frombuffer(payload, dtype="<f4", offset=_HEADER.size).reshape(header.num_frames, header.dim)
    return FeatureSequence(frames.astype(np.float32), header.frameshift_ms, header.kind)


def read_feature_header(path: Union[str, Path]) -> FeatureHeader:
    with open(path, "rb") as f:
        return _parse_header(f.read(_HEADER.size))


def feature_path(feature_dir: Union[str, Path], utt_id: str, kind: Union[str, FeatureKind]) -> Path:
    return Path(feature_dir) / f"{utt_id}.{FeatureKind(kind).value}.feat"


def _staging_path(path: Path) -> Path:
    return path.with_name(path.name + ".tmp")


def save_features(path: Union[str, Path], f: FeatureSequence, params: Optional[DspParams] = None):
    path = Path(path)
    staging = _staging_path(path)
    try:
        staging.write_bytes(encode_features(f, params.digest() if params else NO_DIGEST))
        os.replace(staging, path)
    except BaseException:
        staging.unlink(missing_ok=True)
        raise


def load_features(path: Union[str, Path]) -> FeatureSequence:
    return decode_features(Path(path).read_bytes())


async def save_features_async(path: Union[str, Path], f: FeatureSequence, params: Optional[DspParams] = None):
    """Write to a staging file and rename it over path, so an interrupted
    write never leaves a partial feature file behind"""
    path = Path(path)
    staging = _staging_path(path)
    try:
        async with aiofiles.open(staging, "wb") as out:
            await out.write(encode_features(f, params.digest() if params else NO_DIGEST))
        await aiofiles.os.replace(staging, path)
    except BaseException:
        staging.unlink(missing_ok=True)
        raise


def stale_reason(path: Union[str, Path], kind: Union[str, FeatureKind], params: DspParams) -> Optional[str]:
    """Why a cached feature file cannot stand in for fresh extraction with
    params, or None when it can"""
    path = Path(path)
    if not path.exists():
        return "missing"
    try:
        header = read_feature_header(path)
    except FeatureFormatError as e:
        return str(e)
    kind = FeatureKind(kind)
    if header.kind is not kind:
        return f"holds {header.kind.value}, not {kind.value}"
    if header.frameshift_ms != params.hop_ms:
        return f"frameshift {header.frameshift_ms} ms, expected {params.hop_ms} ms"
    if header.dim != params.feature_dim(kind):
        return f"dimension {header.dim}, expected {params.feature_dim(kind)}"
    if header.params_digest != params.digest():
        return "extracted with different parameters"
    if path.stat().st_size != header.payload_size:
        return "truncated"
    return None


def cached_features(path: Optional[Union[str, Path]], kind: Union[str, FeatureKind],
                    params: DspParams) -> Optional[FeatureSequence]:
    """The cached features at path if they match params, else None"""
    if path is None:
        return None
    reason = stale_reason(path, kind, params)
    if reason is None:
        return load_features(path)
    if reason != "missing":
        logger.warning(f"⚠️ Ignoring cached features {path}: {reason}")
    return None
