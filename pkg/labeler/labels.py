"""
Frame-level label sequences and label files.

Label file format (text):
    frameshift_ms=20 num_classes=40
    utt_id id id id ...
    ...
"""

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Union

import numpy as np

from core.errors import FrameshiftMismatchError, LabelPairingError, PhonemeLabelError

PHONEME_CLASSES = 40
RESAMPLE_FACTORS = (2, 4)

_HEADER = re.compile(r"^\s*frameshift_ms=(\d+)\s+num_classes=(\d+)\s*$")


@dataclass
class LabelSequence:
    ids: np.ndarray
    frameshift_ms: int
    num_classes: int

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        if len(self.ids) and (self.ids.min() < 0 or self.ids.max() >= self.num_classes):
            raise ValueError(f"label ids must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.ids)


def resample_labels(labels: LabelSequence, factor: int) -> LabelSequence:
    """Keep the first label of every window of `factor` frames"""
    if factor not in RESAMPLE_FACTORS:
        raise ValueError(f"resampling factor must be one of {RESAMPLE_FACTORS}")
    return LabelSequence(labels.ids[::factor], labels.frameshift_ms * factor, labels.num_classes)


def labels_at(labels: LabelSequence, frameshift_ms: int) -> LabelSequence:
    """Decimate to a coarser frameshift (identity when already there)"""
    if frameshift_ms == labels.frameshift_ms:
        return labels
    factor, rem = divmod(frameshift_ms, labels.frameshift_ms)
    if rem or factor < 1:
        raise FrameshiftMismatchError(
            f"cannot derive {frameshift_ms} ms labels from {labels.frameshift_ms} ms labels")
    if factor == 8:
        return resample_labels(resample_labels(labels, 4), 2)
    return resample_labels(labels, factor)


def write_label_file(path: Union[str, Path], labels: Mapping[str, LabelSequence]):
    sequences = list(labels.values())
    if not sequences:
        raise ValueError("no label sequences to write")
    frameshift, num_classes = sequences[0].frameshift_ms, sequences[0].num_classes
    if any(s.frameshift_ms != frameshift or s.num_classes != num_classes for s in sequences):
        raise ValueError("all sequences in a label file share frameshift and class count")
    lines = [f"frameshift_ms={frameshift} num_classes={num_classes}"]
    lines += [" ".join([utt_id, *map(str, seq.ids.tolist())]) for utt_id, seq in labels.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_label_file(path: Union[str, Path], num_classes: Optional[int] = None) -> Dict[str, LabelSequence]:
    """Parse a label file; num_classes overrides the header's class count"""
    path = Path(path)
    if not path.exists():
        raise LabelPairingError(f"label file not found: {path}")
    lines = [line for line in path.read_text().splitlines() if line.strip()]
    if not lines:
        return {}

    header = _HEADER.match(lines[0])
    if not header:
        raise PhonemeLabelError(f"{path}: first line must be 'frameshift_ms=<ms> num_classes=<C>'")
    frameshift = int(header.group(1))
    classes = num_classes if num_classes is not None else int(header.group(2))

    labels = {}
    for lineno, line in enumerate(lines[1:], start=2):
        utt_id, *tokens = line.split()
        if utt_id in labels:
            raise PhonemeLabelError(f"{path}:{lineno}: duplicate utt_id {utt_id!r}")
        try:
            ids = np.array([int(t) for t in tokens], dtype=np.int64)
        except ValueError:
            raise PhonemeLabelError(f"{path}:{lineno}: label ids must be integers")
        if len(ids) and (ids.min() < 0 or ids.max() >= classes):
            raise PhonemeLabelError(f"{path}:{lineno}: phoneme id out of range [0, {classes})")
        labels[utt_id] = LabelSequence(ids, frameshift, classes)
    return labels


def load_phoneme_labels(path: Union[str, Path]) -> Dict[str, LabelSequence]:
    """Externally aligned phoneme labels, always 40 classes"""
    return load_label_file(path, num_classes=PHONEME_CLASSES)


def pair_labels(utt_ids: Iterable[str], labels: Mapping[str, LabelSequence],
                expected_frames: Optional[Mapping[str, int]] = None,
                tolerance: int = 2) -> Dict[str, LabelSequence]:
    """Labels for every utterance, checked against the expected frame counts"""
    paired = {}
    problems = []
    for utt_id in utt_ids:
        seq = labels.get(utt_id)
        if seq is None:
            problems.append(f"{utt_id}: no labels")
        elif len(seq) == 0:
            problems.append(f"{utt_id}: empty label sequence")
        elif expected_frames is not None and abs(len(seq) - expected_frames[utt_id]) > tolerance:
            problems.append(f"{utt_id}: {len(seq)} labels for {expected_frames[utt_id]} frames")
        else:
            paired[utt_id] = seq
    if problems:
        preview = "; ".join(problems[:5])
        raise LabelPairingError(f"{len(problems)} utterance(s) cannot be paired with labels: {preview}")
    return paired
