"""
Masked-prediction pre-training loop.

Each update step draws update_freq micro-batches, samples span masks from the
step's own generator, runs front-end, encoder and loss inside their profiler
scopes, backpropagates the frame-weighted mean once and takes one Adam step.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

import torch

from core.config import RunConfig, build_run_config
from core.errors import ValidationError
from core.manifest import Manifest
from core.runtime import RNG_STREAM_MASKS, seed_everything, step_rng
from labeler.labels import LabelSequence, labels_at, load_label_file, load_phoneme_labels, pair_labels
from profiler.timing import (
    FEATURE_EXTRACTION, LOSS_CALCULATION, TRANSFORMER_ENCODING, OperationCounter, StageProfiler,
)
from signal_frontend.dsp import DspParams
from trainer.checkpoint import (
    MetricsLog, check_compatible, load_checkpoint, resume_into, save_checkpoint, step_record,
)
from trainer.data import StepBatches, Utterance, load_inputs, resolve_manifest, seconds_budget_batches, step_loader
from trainer.model import PretrainModel, accumulate_backward
from trainer.optim import LrSchedule, adam_step, build_optimizer, lr_at

logger = logging.getLogger("lab.trainer.pretrain")


@dataclass
class PretrainResult:
    steps: int
    final_loss: float
    final_accuracy: Optional[float]
    run_dir: Path
    checkpoint: Optional[Path]
    profiler: StageProfiler
    metrics_path: Path


def load_training_labels(config: RunConfig) -> Dict[str, LabelSequence]:
    """Label file for the configured source, decimated to the encoder frameshift"""
    if not config.labels.path:
        raise ValidationError("labels.path: pre-training needs a label file")
    if config.labels.source == "phoneme":
        raw = load_phoneme_labels(config.labels.path)
    else:
        raw = load_label_file(config.labels.path, num_classes=config.labels.num_classes)
    return {utt: labels_at(seq, config.frontend.frameshift_ms) for utt, seq in raw.items()}


def batch_budget_seconds(config: RunConfig, max_seconds: float) -> float:
    if config.data.scale_batch_with_frameshift:
        return max_seconds * config.frontend.frameshift_ms / 20
    return max_seconds


def prepare_utterances(config: RunConfig, manifest: Manifest, frontend,
                       labels: Optional[Mapping[str, LabelSequence]] = None,
                       targets: Optional[Mapping[str, List[int]]] = None) -> List[Utterance]:
    """Load model inputs and pair them with frame labels and/or token targets.

    Label pairing is checked for every utterance before anything trains."""
    inputs = load_inputs(manifest, config.frontend.kind, DspParams.from_config(config.features),
                         config.data.feature_dir or None,
                         workers=1 if config.run.deterministic else 4)
    frames = {utt: frontend.config.output_length(len(x)) for utt, x in inputs.items()}
    if labels is not None:
        labels = pair_labels(manifest.utt_ids, labels, frames)

    utterances = []
    for entry in manifest:
        num_frames = frames[entry.utt_id]
        ids = None
        if labels is not None:
            ids = labels[entry.utt_id].ids
            num_frames = min(num_frames, len(ids))
        utterances.append(Utterance(
            utt_id=entry.utt_id,
            inputs=inputs[entry.utt_id],
            duration_s=entry.duration_s,
            num_frames=num_frames,
            labels=ids,
            targets=list(targets[entry.utt_id]) if targets is not None else [],
        ))
    return utterances


def model_from_checkpoint(path: Union[str, Path]) -> Tuple[PretrainModel, RunConfig, dict]:
    """Pre-trained model rebuilt from the config stored in its checkpoint"""
    payload = load_checkpoint(path)
    config = build_run_config(payload["config"])
    model = PretrainModel(config)
    model.load_state_dict(payload["model"])
    model.eval()
    return model, config, payload


def pretrain_loop(config: RunConfig, run_dir: Union[str, Path], steps: Optional[int] = None,
                  resume: Optional[Union[str, Path]] = None, save_checkpoints: bool = True) -> PretrainResult:
    run_dir = Path(run_dir)
    total_steps = steps if steps is not None else config.pretrain.steps
    update_freq = config.pretrain.update_freq
    seed = config.run.seed
    if config.masking.span_start_prob <= 0:
        raise ValidationError("masking.span_start_prob: 0 never masks a frame, pre-training has no targets")

    seed_everything(seed, config.run.deterministic, config.run.dtype)
    counter = OperationCounter()
    model = PretrainModel(config, counter)
    optimizer = build_optimizer(model.parameters(), config.optimizer)
    schedule = LrSchedule.from_config(config.pretrain.schedule, total_steps)
    profiler = StageProfiler(config.profiler.window_steps, config.profiler.enabled, counter)

    manifest = resolve_manifest(config.data.train_manifest)
    utterances = prepare_utterances(config, manifest, model.backbone.frontend, load_training_labels(config))
    batches = seconds_budget_batches(utterances, batch_budget_seconds(config, config.data.max_batch_seconds))
    logger.info(f"🔍 {len(utterances)} utterances in {len(batches)} batches, "
                f"{total_steps} steps x {update_freq} micro-batches")

    start = 0
    if resume is not None:
        payload = load_checkpoint(resume)
        check_compatible(payload, config, resume)
        start = resume_into(payload, model, optimizer)
        logger.info(f"🔄 Resuming from step {start} ({resume})")

    metrics = MetricsLog(run_dir / "metrics.jsonl")
    metrics.truncate_after(start)
    dataset = StepBatches(utterances, batches, seed, torch.get_default_dtype(), length=total_steps * update_freq)
    loader = iter(step_loader(dataset, start * update_freq, config.data.num_workers, config.data.prefetch,
                              config.run.deterministic))

    model.train()
    loss_value, accuracy, checkpoint = float("nan"), None, None
    for step in range(start + 1, total_steps + 1):
        micro_batches = [next(loader) for _ in range(update_freq)]
        with profiler.step(sum(b.audio_seconds for b in micro_batches)):
            rng = step_rng(seed, RNG_STREAM_MASKS, step)
            reports = []
            for batch in micro_batches:
                masked = model.backbone.sample_masks(batch, config.masking.span_start_prob,
                                                     config.masking.span_len, rng)
                with profiler.scope(FEATURE_EXTRACTION):
                    latents, encoder_mask = model.backbone.features(batch, masked)
                with profiler.scope(TRANSFORMER_ENCODING):
                    outputs = model.backbone.encode(latents, batch.num_frames)
                with profiler.scope(LOSS_CALCULATION):
                    reports.append(model.loss(outputs, encoder_mask, batch.labels))
            with profiler.backward():
                loss_value = accumulate_backward([(r.loss, r.masked_frames) for r in reports])
            lr = lr_at(step, schedule)
            adam_step(optimizer, lr)

        frames = sum(r.masked_frames for r in reports)
        accuracy = sum(r.correct for r in reports) / frames
        times = None if config.run.deterministic or not profiler.enabled else profiler.last_step
        metrics.append(step_record(step, loss_value, accuracy, lr, times))
        if step % config.pretrain.log_interval == 0 or step == total_steps:
            logger.info(f"step {step}/{total_steps} loss={loss_value:.4f} acc={accuracy:.3f} lr={lr:.2e}")

        if save_checkpoints and (step % config.pretrain.checkpoint_interval == 0 or step == total_steps):
            checkpoint = save_checkpoint(run_dir / f"checkpoint_{step}.pt", model, optimizer, step, config)
            save_checkpoint(run_dir / "last.pt", model, optimizer, step, config)

    return PretrainResult(total_steps, loss_value, accuracy, run_dir, checkpoint, profiler, metrics.path)
