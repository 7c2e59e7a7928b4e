"""Seeding, determinism switches and run-directory metadata."""

import json
import logging
import platform
import random
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import torch

logger = logging.getLogger("lab.runtime")


def seed_everything(seed: int, deterministic: bool = False, dtype: str = "float32"):
    """Seed python, numpy and torch; optionally force deterministic kernels"""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(deterministic)
    torch.set_default_dtype(torch.float64 if dtype == "float64" else torch.float32)
    if deterministic:
        logger.debug(f"🔒 Deterministic mode on (seed={seed}, dtype={dtype})")


def step_rng(seed: int, stream: int, step: int) -> np.random.Generator:
    """Independent generator for one (stream, step) pair"""
    return np.random.default_rng([seed, stream, step])


RNG_STREAM_MASKS = 1
RNG_STREAM_BATCHES = 2
RNG_STREAM_FINETUNE_MASKS = 3
RNG_STREAM_SYNTH = 4


def write_run_metadata(run_dir: Union[str, Path], command: str, config_hash: Optional[str],
                       seed: int, extra: Optional[Dict[str, Any]] = None) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    metadata = {
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "created": datetime.now(timezone.utc).isoformat(),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "torch": torch.__version__,
        },
    }
    if extra:
        metadata.update(extra)
    path = run_dir / "metadata.json"
    path.write_text(json.dumps(metadata, indent=2, sort_keys=True))
    return path
