"""
Training data: per-utterance model inputs, seconds-budget batches and a
step-indexed loader.

Batches are fixed once (utterances sorted by duration, packed greedily under
the seconds budget). The batch used at a given micro-step depends only on
(seed, micro-step), so a resumed run sees exactly the batches an
uninterrupted run would.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from core.manifest import Manifest, ManifestEntry
from core.runtime import RNG_STREAM_BATCHES, step_rng
from signal_frontend.dsp import DspParams, FeatureKind, cmvn, fbank
from signal_frontend.io import cached_features, feature_path, read_wav

logger = logging.getLogger("lab.trainer.data")


@dataclass
class Utterance:
    utt_id: str
    inputs: np.ndarray                 # (N,) samples or (T10, n_mels) normalized Fbank
    duration_s: float
    num_frames: int                    # encoder-rate frames the front-end will produce
    labels: Optional[np.ndarray] = None
    targets: List[int] = field(default_factory=list)


def load_input(entry: ManifestEntry, frontend_kind: str, params: DspParams,
               feature_dir: Optional[str] = None) -> np.ndarray:
    """Raw samples for the waveform front-end, CMVN'd Fbank otherwise"""
    if frontend_kind == "waveform":
        return read_wav(entry.path).samples
    cached = feature_path(feature_dir, entry.utt_id, FeatureKind.FBANK) if feature_dir else None
    features = cached_features(cached, FeatureKind.FBANK, params)
    if features is None:
        features = fbank(read_wav(entry.path), params)
    return cmvn(features, params.cmvn_var_floor).frames


def load_inputs(manifest: Manifest, frontend_kind: str, params: DspParams,
                feature_dir: Optional[str] = None, workers: int = 4) -> Dict[str, np.ndarray]:
    def _load(entry):
        return entry.utt_id, load_input(entry, frontend_kind, params, feature_dir)

    with ThreadPoolExecutor(max_workers=max(workers, 1)) as pool:
        loaded = dict(pool.map(_load, manifest.entries))
    logger.info(f"🔍 Loaded {len(loaded)} utterances ({manifest.total_seconds:.1f} s of audio)")
    return loaded


def seconds_budget_batches(utterances: Sequence[Utterance], max_seconds: float) -> List[List[int]]:
    """Indices packed into batches whose total duration stays within budget;
    an utterance longer than the budget gets a batch of its own"""
    order = sorted(range(len(utterances)), key=lambda i: (utterances[i].duration_s, utterances[i].utt_id))
    batches, current, seconds = [], [], 0.0
    for i in order:
        duration = utterances[i].duration_s
        if current and seconds + duration > max_seconds:
            batches.append(current)
            current, seconds = [], 0.0
        current.append(i)
        seconds += duration
    if current:
        batches.append(current)
    return batches


@dataclass
class Batch:
    utt_ids: List[str]
    inputs: torch.Tensor               # (B, N) or (B, T10, D), zero padded
    input_lengths: torch.Tensor
    num_frames: torch.Tensor           # encoder-rate frames per utterance
    labels: Optional[torch.Tensor]     # (B, max num_frames), zero padded
    targets: List[List[int]]
    audio_seconds: float


def collate(utterances: Sequence[Utterance], dtype: torch.dtype = torch.float32) -> Batch:
    lengths = [len(u.inputs) for u in utterances]
    shape = (len(utterances), max(lengths)) + utterances[0].inputs.shape[1:]
    inputs = np.zeros(shape, dtype=np.float64)
    for i, u in enumerate(utterances):
        inputs[i, :len(u.inputs)] = u.inputs

    num_frames = [u.num_frames for u in utterances]
    labels = None
    if utterances[0].labels is not None:
        labels = np.zeros((len(utterances), max(num_frames)), dtype=np.int64)
        for i, u in enumerate(utterances):
            labels[i, :u.num_frames] = u.labels[:u.num_frames]
        labels = torch.from_numpy(labels)

    return Batch(
        utt_ids=[u.utt_id for u in utterances],
        inputs=torch.from_numpy(inputs).to(dtype),
        input_lengths=torch.tensor(lengths, dtype=torch.long),
        num_frames=torch.tensor(num_frames, dtype=torch.long),
        labels=labels,
        targets=[list(u.targets) for u in utterances],
        audio_seconds=float(sum(u.duration_s for u in utterances)),
    )


class StepBatches(Dataset):
    """Item k is the batch for micro-step k: an epoch-wise permutation of the
    fixed batches, seeded by (seed, epoch)"""

    def __init__(self, utterances: Sequence[Utterance], batches: List[List[int]], seed: int,
                 dtype: torch.dtype = torch.float32, length: int = 0):
        self.utterances = list(utterances)
        self.batches = batches
        self.seed = seed
        self.dtype = dtype
        self.length = length

    def __len__(self) -> int:
        return self.length

    def batch_indices(self, micro_step: int) -> List[int]:
        epoch, position = divmod(micro_step, len(self.batches))
        order = step_rng(self.seed, RNG_STREAM_BATCHES, epoch).permutation(len(self.batches))
        return self.batches[order[position]]

    def __getitem__(self, micro_step: int) -> Batch:
        return collate([self.utterances[i] for i in self.batch_indices(micro_step)], self.dtype)


def _identity(batch):
    return batch


def step_loader(dataset: StepBatches, first_micro_step: int, num_workers: int = 0,
                prefetch: int = 2, deterministic: bool = False) -> DataLoader:
    """Loader yielding batches for micro-steps first_micro_step, first_micro_step+1, ..."""
    workers = 0 if deterministic else num_workers
    kwargs = {"prefetch_factor": prefetch} if workers > 0 else {}
    return DataLoader(dataset, batch_size=None, sampler=range(first_micro_step, len(dataset)),
                      num_workers=workers, collate_fn=_identity, **kwargs)


def resolve_manifest(path: str) -> Manifest:
    return Manifest.load(Path(path)).validate()
