"""
CTC fine-tuning of a pre-trained backbone.

For the first freeze_steps updates the front-end and encoder run without
autograd, so only the CTC projection receives gradients and moves. Dev WER is
measured every eval_interval steps and the best-scoring model is kept.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import torch

from core.config import RunConfig, build_run_config
from core.errors import CtcGuardViolation, ValidationError
from core.manifest import load_transcripts
from core.runtime import RNG_STREAM_FINETUNE_MASKS, seed_everything, step_rng
from finetune.ctc import CtcBatch, ctc_length_guard, ctc_loss
from finetune.decode import decode_batch
from finetune.tokenizer import Tokenizer, build_tokenizer
from finetune.wer import corpus_wer
from trainer.checkpoint import (
    MetricsLog, check_compatible, load_checkpoint, save_checkpoint, step_record,
)
from trainer.data import StepBatches, Utterance, collate, resolve_manifest, seconds_budget_batches, step_loader
from trainer.model import FinetuneModel, accumulate_backward, load_backbone_state, parameter_drift
from trainer.optim import LrSchedule, adam_step, build_optimizer, lr_at
from trainer.pretrain import batch_budget_seconds, prepare_utterances

logger = logging.getLogger("lab.trainer.finetune")


@dataclass
class FinetuneResult:
    steps: int
    final_loss: float
    run_dir: Path
    tokenizer: Tokenizer
    checkpoint: Optional[Path] = None
    best_checkpoint: Optional[Path] = None
    best_wer: Optional[float] = None
    best_step: Optional[int] = None
    skipped: List[str] = field(default_factory=list)
    dev_wers: Dict[int, float] = field(default_factory=dict)


def apply_ctc_guard(utterances: Sequence[Utterance], policy: str) -> Tuple[List[Utterance], List[str]]:
    """Drop (policy "skip") or reject (policy "fail") utterances whose frames
    cannot carry their targets"""
    kept, violations = [], []
    for u in utterances:
        result = ctc_length_guard(u.num_frames, u.targets)
        if result:
            kept.append(u)
        else:
            violations.append(u.utt_id)
            logger.warning(f"⚠️ {u.utt_id}: {result.num_frames} frames for targets needing "
                           f"{result.required_frames}")
    if violations and policy == "fail":
        raise CtcGuardViolation(f"{len(violations)} utterance(s) have fewer frames than their targets need "
                                f"(first: {violations[0]})")
    if violations:
        logger.warning(f"⚠️ Skipping {len(violations)} of {len(utterances)} utterances that violate the CTC guard")
    if not kept:
        raise CtcGuardViolation("no training utterance satisfies the CTC length guard")
    return kept, violations


def train_tokenizer(config: RunConfig, transcripts: Dict[str, str], utt_ids: Sequence[str]) -> Tokenizer:
    section = config.finetune.tokenizer
    if section.path and Path(section.path).exists():
        logger.info(f"🔍 Loading tokenizer from {section.path}")
        return Tokenizer.load(section.path)
    return build_tokenizer(section.kind, [transcripts[u] for u in utt_ids], section.vocab_size)


def require_transcripts(utt_ids: Sequence[str], transcripts: Dict[str, str], what: str = "utterance"):
    missing = [u for u in utt_ids if u not in transcripts]
    if missing:
        raise ValidationError(f"{len(missing)} {what}(s) have no transcript (first: {missing[0]})")


def targets_for(manifest, transcripts: Dict[str, str], tokenizer: Tokenizer) -> Dict[str, List[int]]:
    require_transcripts(manifest.utt_ids, transcripts)
    return {u: tokenizer.encode(transcripts[u]) for u in manifest.utt_ids}


def ctc_batch_loss(model: FinetuneModel, batch, masked=None, frozen: bool = False) -> Tuple[torch.Tensor, int]:
    """Per-token mean CTC loss of a batch and its token count"""
    logits = model.logits(batch, masked, frozen=frozen)
    lengths = torch.clamp(batch.num_frames, max=logits.shape[1])
    tokens = sum(len(t) for t in batch.targets)
    loss = ctc_loss(CtcBatch(logits, batch.targets, lengths), reduction="sum")
    return loss / tokens, tokens


def transcribe(model: FinetuneModel, utterances: Sequence[Utterance], tokenizer: Tokenizer,
               beam: int = 1, batch_seconds: float = 8.0) -> Dict[str, str]:
    """Hypothesis text per utterance"""
    hyps = {}
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for indices in seconds_budget_batches(utterances, batch_seconds):
            batch = collate([utterances[i] for i in indices], torch.get_default_dtype())
            logits = model.logits(batch)
            lengths = torch.clamp(batch.num_frames, max=logits.shape[1]).tolist()
            for utt_id, ids in zip(batch.utt_ids, decode_batch(logits, lengths, beam)):
                hyps[utt_id] = tokenizer.decode(ids)
    model.train(was_training)
    return hyps


def evaluate_wer(model: FinetuneModel, utterances: Sequence[Utterance], transcripts: Dict[str, str],
                 tokenizer: Tokenizer, beam: int = 1, batch_seconds: float = 8.0) -> float:
    require_transcripts([u.utt_id for u in utterances], transcripts, "dev utterance")
    hyps = transcribe(model, utterances, tokenizer, beam, batch_seconds)
    return corpus_wer((hyps[u.utt_id], transcripts[u.utt_id]) for u in utterances)[0]


def finetuned_from_checkpoint(path: Union[str, Path]) -> Tuple[FinetuneModel, RunConfig, Tokenizer]:
    payload = load_checkpoint(path)
    if "tokenizer" not in payload["sections"]:
        raise ValidationError(f"{path} is a pre-training checkpoint; decoding needs a fine-tuned one")
    config = build_run_config(payload["config"])
    tokenizer = Tokenizer.from_text(payload["tokenizer"], source=str(path))
    model = FinetuneModel(config, tokenizer.num_outputs)
    model.load_state_dict(payload["model"])
    model.eval()
    return model, config, tokenizer


def finetune_loop(config: RunConfig, run_dir: Union[str, Path], checkpoint: Optional[Union[str, Path]] = None,
                  steps: Optional[int] = None) -> FinetuneResult:
    run_dir = Path(run_dir)
    ft = config.finetune
    total_steps = steps if steps is not None else ft.steps
    checkpoint = checkpoint or ft.checkpoint
    if not checkpoint:
        raise ValidationError("finetune.checkpoint: fine-tuning needs a pre-trained checkpoint")
    if not config.data.transcripts:
        raise ValidationError("data.transcripts: fine-tuning needs a transcript manifest")
    seed = config.run.seed
    seed_everything(seed, config.run.deterministic, config.run.dtype)

    payload = load_checkpoint(checkpoint)
    check_compatible(payload, config, checkpoint)

    transcripts = load_transcripts(config.data.transcripts)
    train_manifest = resolve_manifest(config.data.train_manifest)
    tokenizer = train_tokenizer(config, transcripts, train_manifest.utt_ids)
    run_dir.mkdir(parents=True, exist_ok=True)
    tokenizer.save(run_dir / "tokenizer.txt")
    logger.info(f"🔍 {tokenizer.kind} tokenizer with {tokenizer.vocab_size} tokens")

    model = FinetuneModel(config, tokenizer.num_outputs)
    load_backbone_state(model, payload["model"])
    pretrained = [p.detach().clone() for p in model.pretrained_parameters()]
    optimizer = build_optimizer(model.parameters(), config.optimizer)
    schedule = LrSchedule.from_config(ft.schedule, total_steps)

    train = prepare_utterances(config, train_manifest, model.backbone.frontend,
                               targets=targets_for(train_manifest, transcripts, tokenizer))
    train, skipped = apply_ctc_guard(train, config.guard_policy)
    dev = []
    if config.data.dev_manifest:
        dev_manifest = resolve_manifest(config.data.dev_manifest)
        require_transcripts(dev_manifest.utt_ids, transcripts, "dev utterance")
        dev = prepare_utterances(config, dev_manifest, model.backbone.frontend)

    budget = batch_budget_seconds(config, ft.max_batch_seconds)
    batches = seconds_budget_batches(train, budget)
    dataset = StepBatches(train, batches, seed, torch.get_default_dtype(), length=total_steps * ft.update_freq)
    loader = iter(step_loader(dataset, 0, config.data.num_workers, config.data.prefetch, config.run.deterministic))
    metrics = MetricsLog(run_dir / "metrics.jsonl")
    metrics.truncate_after(0)

    result = FinetuneResult(total_steps, float("nan"), run_dir, tokenizer, skipped=skipped)
    extra = {"tokenizer": tokenizer.to_text()}
    model.train()
    for step in range(1, total_steps + 1):
        frozen = step <= ft.freeze_steps
        rng = step_rng(seed, RNG_STREAM_FINETUNE_MASKS, step)
        weighted = []
        for _ in range(ft.update_freq):
            batch = next(loader)
            masked = None
            if ft.mask_prob > 0:
                masked = model.backbone.sample_masks(batch, ft.mask_prob, ft.mask_len, rng, require_any=False)
            weighted.append(ctc_batch_loss(model, batch, masked, frozen))
        result.final_loss = accumulate_backward(weighted)
        lr = lr_at(step, schedule)
        adam_step(optimizer, lr)

        record = step_record(step, result.final_loss, None, lr, frozen=frozen,
                             backbone_drift=parameter_drift(pretrained, model.pretrained_parameters()))
        if dev and (step % ft.eval_interval == 0 or step == total_steps):
            dev_wer = evaluate_wer(model, dev, transcripts, tokenizer, ft.eval_beam, budget)
            record["dev_wer"] = dev_wer
            result.dev_wers[step] = dev_wer
            if result.best_wer is None or dev_wer < result.best_wer:
                result.best_wer, result.best_step = dev_wer, step
                result.best_checkpoint = save_checkpoint(run_dir / "best.pt", model, optimizer, step, config, extra)
            logger.info(f"step {step}/{total_steps} dev WER={dev_wer:.3f} (best {result.best_wer:.3f} "
                        f"at step {result.best_step})")
        metrics.append(record)
        if step % ft.log_interval == 0 or step == total_steps:
            state = "frozen" if frozen else "full"
            logger.info(f"step {step}/{total_steps} ctc={result.final_loss:.4f} lr={lr:.2e} [{state}]")

    save_checkpoint(run_dir / f"checkpoint_{total_steps}.pt", model, optimizer, total_steps, config, extra)
    result.checkpoint = save_checkpoint(run_dir / "last.pt", model, optimizer, total_steps, config, extra)
    return result
