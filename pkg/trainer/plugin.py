"""
Trainer Plugin - pre-training and CTC fine-tuning commands

Both loops are synchronous and CPU bound; they run in a worker thread so the
dispatcher stays responsive. Every run writes metadata.json, a metrics.jsonl
log and checkpoints into its run directory.
"""

import asyncio
import logging
from typing import List, Optional

from core.errors import ValidationError
from core.plugin import CommandContext, LabPlugin
from core.runtime import write_run_metadata
from trainer.finetune import finetune_loop
from trainer.pretrain import pretrain_loop


class TrainerPlugin(LabPlugin):
    def __init__(self, logger: Optional[logging.Logger] = None):
        super().__init__("trainer", logger=logger)
        self.description = "Masked-prediction pre-training and CTC fine-tuning"

    def get_commands(self) -> List[str]:
        return ["pretrain", "finetune"]

    async def handle_command(self, context: CommandContext) -> Optional[str]:
        if context.command == "pretrain":
            return await self._handle_pretrain(context)
        elif context.command == "finetune":
            return await self._handle_finetune(context)
        return f"Unknown command: {context.command}"

    def _require_config(self, context: CommandContext):
        if not context.has_config:
            raise ValidationError(f"{context.command}: --config is required")
        return context.config

    async def _handle_pretrain(self, context: CommandContext) -> str:
        config = self._require_config(context)
        run_dir = context.run_dir
        write_run_metadata(run_dir, "pretrain", config.config_hash(), config.run.seed,
                           {"deterministic": config.run.deterministic})
        self.logger.info(f"🚀 Pre-training {config.loss.kind} loss, {config.frontend.kind} front-end "
                         f"at {config.frontend.frameshift_ms} ms into {run_dir}")

        result = await asyncio.to_thread(pretrain_loop, config, run_dir, context.steps,
                                         context.get_arg("resume"))
        accuracy = "n/a" if result.final_accuracy is None else f"{result.final_accuracy:.3f}"
        return (f"✅ pretrain: {result.steps} steps, loss {result.final_loss:.4f}, "
                f"masked accuracy {accuracy} ({result.checkpoint})")

    async def _handle_finetune(self, context: CommandContext) -> str:
        config = self._require_config(context)
        run_dir = context.run_dir
        write_run_metadata(run_dir, "finetune", config.config_hash(), config.run.seed,
                           {"deterministic": config.run.deterministic})
        checkpoint = context.get_arg("checkpoint")
        self.logger.info(f"🚀 Fine-tuning {checkpoint or config.finetune.checkpoint} with "
                         f"{config.finetune.tokenizer.kind} targets into {run_dir}")

        result = await asyncio.to_thread(finetune_loop, config, run_dir, checkpoint, context.steps)
        message = f"✅ finetune: {result.steps} steps, ctc loss {result.final_loss:.4f}"
        if result.skipped:
            message += f", {len(result.skipped)} utterance(s) skipped by the CTC guard"
        if result.best_wer is not None:
            message += f", best dev WER {result.best_wer:.3f} at step {result.best_step}"
        return message + f" ({result.checkpoint})"
