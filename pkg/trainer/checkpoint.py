"""
Checkpoints and the metrics log.

A checkpoint is one torch.save file whose top level is a section table:
`sections` lists the names present, each stored under its own key.
"""

import json
import logging
import random
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
import torch

from core.errors import CheckpointError

logger = logging.getLogger("lab.trainer.checkpoint")

CHECKPOINT_FORMAT = 1
REQUIRED_SECTIONS = ("model", "optimizer", "rng", "step", "config_hash", "config", "model_hash")


def rng_state() -> Dict[str, Any]:
    return {
        "python": random.getstate(),
        "numpy": np.random.get_state(),
        "torch": torch.get_rng_state(),
    }


def restore_rng_state(state: Dict[str, Any]):
    random.setstate(state["python"])
    np.random.set_state(state["numpy"])
    torch.set_rng_state(state["torch"])


def save_checkpoint(path: Union[str, Path], model: torch.nn.Module, optimizer: torch.optim.Optimizer,
                    step: int, config, extra: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sections = {
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict(),
        "rng": rng_state(),
        "step": step,
        "config_hash": config.config_hash(),
        "config": config.to_dict(),
        "model_hash": config.model_hash(),
    }
    sections.update(extra or {})
    payload = {"format": CHECKPOINT_FORMAT, "sections": list(sections), **sections}
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    logger.info(f"💾 Saved checkpoint at step {step} to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a lab checkpoint")
    missing = [s for s in REQUIRED_SECTIONS if s not in payload.get("sections", ())]
    if missing:
        raise CheckpointError(f"{path}: missing sections {missing}")
    return payload


def check_compatible(payload: Dict[str, Any], config, path: Union[str, Path] = "checkpoint"):
    """The pre-trained parameters must have the shapes this config builds"""
    if payload["model_hash"] != config.model_hash():
        stored = payload["config"]
        diffs = [section for section in ("features", "frontend", "encoder")
                 if stored.get(section) != config.to_dict()[section]]
        raise CheckpointError(f"{path} was trained with different {', '.join(diffs) or 'model'} settings")


def resume_into(payload: Dict[str, Any], model: torch.nn.Module, optimizer: torch.optim.Optimizer) -> int:
    """Load model, optimizer and RNG state; returns the completed step"""
    model.load_state_dict(payload["model"])
    optimizer.load_state_dict(payload["optimizer"])
    restore_rng_state(payload["rng"])
    return int(payload["step"])


class MetricsLog:
    """Newline-delimited JSON, one record per update step"""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def truncate_after(self, step: int):
        """Drop records past `step`, so a resumed run continues the log cleanly"""
        if not self.path.exists():
            return
        kept = [r for r in self.read() if r.get("step", 0) <= step]
        self.path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in kept))

    def append(self, record: Dict[str, Any]):
        with self.path.open("a", encoding="utf-8") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def read(self) -> List[Dict[str, Any]]:
        if not self.path.exists():
            return []
        return [json.loads(line) for line in self.path.read_text().splitlines() if line.strip()]


def step_record(step: int, loss: float, acc: Optional[float], lr: float,
                component_times: Optional[Dict[str, float]] = None, **fields) -> Dict[str, Any]:
    record = {"step": step, "loss": loss, "acc": acc, "lr": lr}
    if component_times is not None:
        record["component_times"] = dict(component_times)
    record.update(fields)
    return record


def checkpoint_paths(run_dir: Union[str, Path]) -> Iterable[Path]:
    return sorted(Path(run_dir).glob("checkpoint_*.pt"),
                  key=lambda p: int(p.stem.split("_")[-1]))
