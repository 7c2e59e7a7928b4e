"""Shared fixtures: a small synthetic corpus, tiny run configs and a
finite-difference gradient checker."""

import copy
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np
import pytest
import torch

from core.config import RunConfig, load_run_config
from synth.corpus import SynthCorpus, SynthOptions, write_corpus

GRAD_EPS = 1e-4
GRAD_TOLERANCE = 1e-4
GRAD_SEEDS = range(10)


@pytest.fixture(autouse=True)
def reset_torch_state():
    """Training loops switch the default dtype and deterministic kernels"""
    yield
    torch.set_default_dtype(torch.float32)
    torch.use_deterministic_algorithms(False)


@pytest.fixture(scope="session")
def synth_corpus(tmp_path_factory) -> SynthCorpus:
    root = tmp_path_factory.mktemp("corpus")
    return write_corpus(root, SynthOptions(num_utterances=12), seed=7)


def deep_merge(base: Dict[str, Any], overlay: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def tiny_overrides(corpus: SynthCorpus, out_dir: Path) -> Dict[str, Any]:
    """Overrides that shrink every default to something a laptop trains in seconds"""
    root = corpus.root
    return {
        "run": {"name": "tiny", "seed": 3, "deterministic": True, "out_dir": str(out_dir)},
        "data": {
            "train_manifest": str(root / "train.tsv"),
            "dev_manifest": str(root / "dev.tsv"),
            "transcripts": str(root / "transcripts.tsv"),
            "max_batch_seconds": 3.0,
            "num_workers": 0,
        },
        "frontend": {"kind": "fbank", "frameshift_ms": 20, "conv_channels": 16},
        "masking": {"placement": "pre", "span_start_prob": 0.15, "span_len": 4},
        "labels": {"source": "kmeans", "path": str(corpus.phones_20ms), "num_classes": corpus.num_classes},
        "encoder": {"num_layers": 2, "model_dim": 16, "num_heads": 2, "ffn_dim": 32},
        "loss": {"kind": "ce", "codebook_dim": 16},
        "pretrain": {"steps": 4, "checkpoint_interval": 2, "log_interval": 2,
                     "schedule": {"warmup_steps": 2}},
        "finetune": {
            "steps": 4,
            "freeze_steps": 2,
            "eval_interval": 2,
            "log_interval": 2,
            "max_batch_seconds": 3.0,
            "decode_beam": 2,
            "schedule": {"warmup_steps": 1, "hold_steps": 1, "decay_steps": 2},
        },
        "profiler": {"window_steps": 2},
    }


@pytest.fixture
def make_config(synth_corpus, tmp_path) -> Callable[..., RunConfig]:
    """make_config(**section_overrides) -> validated RunConfig over the tiny setup"""
    def _make(overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
        data = tiny_overrides(synth_corpus, tmp_path / "runs")
        return load_run_config(None, deep_merge(data, overrides or {}))
    return _make


@pytest.fixture
def tiny_overrides_for(synth_corpus, tmp_path):
    def _overrides(extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        return deep_merge(tiny_overrides(synth_corpus, tmp_path / "runs"), extra or {})
    return _overrides


def max_relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-2)


@pytest.fixture
def gradient_check():
    """gradient_check(objective, tensors, grads, rng) -> worst relative error.

    `objective()` returns a float64 scalar computed from `tensors`; `grads`
    are the analytic gradients of that scalar. A few random coordinates of
    every tensor are compared against central differences."""
    def _check(objective: Callable[[], torch.Tensor], tensors, grads, rng: np.random.Generator,
               coords: int = 6, eps: float = GRAD_EPS) -> float:
        worst = 0.0
        for tensor, grad in zip(tensors, grads):
            flat = tensor.data.view(-1)
            for index in rng.choice(flat.numel(), size=min(coords, flat.numel()), replace=False):
                original = float(flat[index])
                with torch.no_grad():
                    flat[index] = original + eps
                    plus = float(objective())
                    flat[index] = original - eps
                    minus = float(objective())
                    flat[index] = original
                numeric = (plus - minus) / (2 * eps)
                worst = max(worst, max_relative_error(float(grad.reshape(-1)[index]), numeric))
        return worst
    return _check
