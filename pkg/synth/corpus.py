"""
Desk-scale synthetic speech.

Each letter is a steady tone (a fundamental plus a weak second harmonic), a
word is a run of letters and words are separated by low-level noise. Segment
boundaries fall on the 10 ms frame grid, so the generator knows the true class
of every frame: 0 for silence, i + 1 for the i-th letter of the alphabet.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from core.manifest import Manifest, ManifestEntry, save_transcripts
from core.runtime import RNG_STREAM_SYNTH, step_rng
from labeler.labels import LabelSequence, labels_at, write_label_file
from signal_frontend.dsp import SAMPLE_RATE, Waveform
from signal_frontend.io import write_wav

logger = logging.getLogger("lab.synth.corpus")

HOP_SAMPLES = SAMPLE_RATE // 100
WINDOW_SAMPLES = SAMPLE_RATE * 25 // 1000
SILENCE = 0

ALPHABET = "abcdefgh"
VOCABULARY = ("bad", "cab", "dead", "face", "head")
THREE_CLASS_ALPHABET = "abc"
THREE_CLASS_VOCABULARY = ("abc", "cab", "bca", "acb", "bac")


@dataclass(frozen=True)
class SynthOptions:
    num_utterances: int = 50
    words_per_utterance: Tuple[int, int] = (1, 3)
    letter_seconds: Tuple[float, float] = (0.06, 0.12)
    gap_seconds: float = 0.05
    tone_classes: int = 8
    dev_fraction: float = 0.2
    amplitude: float = 0.3
    noise_level: float = 0.003

    def __post_init__(self):
        if self.num_utterances < 1:
            raise ValueError("num_utterances must be >= 1")
        if self.tone_classes not in (3, len(ALPHABET)):
            raise ValueError(f"tone_classes must be 3 or {len(ALPHABET)}")
        lo, hi = self.words_per_utterance
        if not 1 <= lo <= hi:
            raise ValueError("words_per_utterance must be an increasing range starting at >= 1")
        if not 0 < self.letter_seconds[0] <= self.letter_seconds[1]:
            raise ValueError("letter_seconds must be a positive increasing range")
        if self.gap_seconds < 0:
            raise ValueError("gap_seconds must be >= 0")
        if not 0.0 <= self.dev_fraction < 1.0:
            raise ValueError("dev_fraction must lie in [0, 1)")

    @property
    def alphabet(self) -> str:
        return THREE_CLASS_ALPHABET if self.tone_classes == 3 else ALPHABET

    @property
    def vocabulary(self) -> Tuple[str, ...]:
        return THREE_CLASS_VOCABULARY if self.tone_classes == 3 else VOCABULARY

    @property
    def num_classes(self) -> int:
        return len(self.alphabet) + 1


def letter_frequencies(alphabet: str) -> Dict[str, float]:
    """Log-spaced tones between 250 Hz and 4 kHz"""
    freqs = np.geomspace(250.0, 4000.0, len(alphabet))
    return {letter: float(f) for letter, f in zip(alphabet, freqs)}


def _frames(seconds: float) -> int:
    return max(int(round(seconds * 100)), 1)


@dataclass
class SynthUtterance:
    utt_id: str
    text: str
    samples: np.ndarray
    segments: List[Tuple[int, int]] = field(default_factory=list)  # (class, num 10 ms hops)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / SAMPLE_RATE

    def frame_labels(self) -> np.ndarray:
        """Class at the centre of every 25 ms / 10 ms analysis frame"""
        per_sample = np.concatenate([np.full(n * HOP_SAMPLES, c, dtype=np.int64) for c, n in self.segments])
        num_frames = 1 + (len(self.samples) - WINDOW_SAMPLES) // HOP_SAMPLES
        centres = np.arange(num_frames) * HOP_SAMPLES + WINDOW_SAMPLES // 2
        return per_sample[centres]


def synth_utterance(index: int, options: SynthOptions, seed: int) -> SynthUtterance:
    rng = step_rng(seed, RNG_STREAM_SYNTH, index)
    alphabet = options.alphabet
    freqs = letter_frequencies(alphabet)
    num_words = int(rng.integers(options.words_per_utterance[0], options.words_per_utterance[1] + 1))
    words = [options.vocabulary[i] for i in rng.integers(0, len(options.vocabulary), num_words)]

    gap = _frames(options.gap_seconds) if options.gap_seconds > 0 else 0
    lo, hi = _frames(options.letter_seconds[0]), _frames(options.letter_seconds[1])
    segments: List[Tuple[int, int]] = []
    chunks = []
    # leading and trailing silence are at least one analysis window long
    edge = max(gap, 3)

    def silence(hops: int):
        segments.append((SILENCE, hops))
        chunks.append(options.noise_level * rng.standard_normal(hops * HOP_SAMPLES))

    silence(edge)
    for w, word in enumerate(words):
        if w and gap:
            silence(gap)
        for letter in word:
            hops = int(rng.integers(lo, hi + 1))
            t = np.arange(hops * HOP_SAMPLES) / SAMPLE_RATE
            f0 = freqs[letter]
            phase = rng.uniform(0, 2 * np.pi)
            tone = np.sin(2 * np.pi * f0 * t + phase) + 0.3 * np.sin(4 * np.pi * f0 * t + phase)
            chunks.append(options.amplitude * tone / 1.3
                          + options.noise_level * rng.standard_normal(len(t)))
            segments.append((alphabet.index(letter) + 1, hops))
    silence(edge)

    return SynthUtterance(f"utt{index:04d}", " ".join(words), np.concatenate(chunks), segments)


@dataclass
class SynthCorpus:
    root: Path
    train: Manifest
    dev: Manifest
    transcripts: Dict[str, str]
    num_classes: int

    @property
    def phones_10ms(self) -> Path:
        return self.root / "phones_10ms.txt"

    @property
    def phones_20ms(self) -> Path:
        return self.root / "phones_20ms.txt"


def write_corpus(out_dir: Union[str, Path], options: SynthOptions, seed: int) -> SynthCorpus:
    """Audio, manifests, transcripts and frame-level ground truth under out_dir"""
    root = Path(out_dir)
    audio_dir = root / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)

    utterances = [synth_utterance(i, options, seed) for i in range(options.num_utterances)]
    entries = []
    for u in utterances:
        path = audio_dir / f"{u.utt_id}.wav"
        write_wav(path, Waveform(u.samples))
        entries.append(ManifestEntry(u.utt_id, path, round(u.duration_s, 4)))

    num_dev = min(int(round(options.num_utterances * options.dev_fraction)), options.num_utterances - 1)
    train = Manifest(entries[:len(entries) - num_dev], source=root / "train.tsv")
    dev = Manifest(entries[len(entries) - num_dev:], source=root / "dev.tsv")
    train.save(root / "train.tsv")
    dev.save(root / "dev.tsv")

    transcripts = {u.utt_id: u.text for u in utterances}
    save_transcripts(root / "transcripts.tsv", transcripts)

    num_classes = options.num_classes
    phones_10 = {u.utt_id: LabelSequence(u.frame_labels(), 10, num_classes) for u in utterances}
    write_label_file(root / "phones_10ms.txt", phones_10)
    write_label_file(root / "phones_20ms.txt", {k: labels_at(v, 20) for k, v in phones_10.items()})

    logger.info(f"✅ Synthesized {len(utterances)} utterances ({sum(e.duration_s for e in entries):.1f} s), "
                f"{len(train)} train / {len(dev)} dev, {num_classes} frame classes")
    return SynthCorpus(root, train, dev, transcripts, num_classes)
