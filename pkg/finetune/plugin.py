"""
Fine-tune Plugin - CTC decoding and WER scoring

`decode` loads a fine-tuned checkpoint, transcribes a manifest and writes
hyp.tsv (utt_id<TAB>text). `score` compares a hypothesis file against a
reference transcript manifest.
"""

import asyncio
import json
import logging
from pathlib import Path
from typing import List, Optional

from core.errors import ValidationError
from core.manifest import Manifest, load_transcripts, save_transcripts
from core.plugin import CommandContext, LabPlugin
from core.runtime import write_run_metadata
from finetune.wer import corpus_wer
from trainer.finetune import finetuned_from_checkpoint, transcribe
from trainer.pretrain import prepare_utterances


class FinetunePlugin(LabPlugin):
    def __init__(self, logger: Optional[logging.Logger] = None):
        super().__init__("finetune", logger=logger)
        self.description = "CTC decoding of fine-tuned checkpoints and word error rate scoring"

    def get_commands(self) -> List[str]:
        return ["decode", "score"]

    async def handle_command(self, context: CommandContext) -> Optional[str]:
        if context.command == "decode":
            return await self._handle_decode(context)
        elif context.command == "score":
            return await self._handle_score(context)
        return f"Unknown command: {context.command}"

    async def _handle_decode(self, context: CommandContext) -> str:
        checkpoint = context.get_arg("checkpoint")
        if not checkpoint:
            raise ValidationError("decode: --checkpoint is required")
        model, stored, tokenizer = finetuned_from_checkpoint(checkpoint)
        manifest_path = context.get_arg("manifest") or stored.data.dev_manifest
        if not manifest_path:
            raise ValidationError("decode: --manifest is required")
        manifest = Manifest.load(manifest_path).validate()
        beam = context.get_arg("beam") or stored.finetune.decode_beam
        if beam < 1:
            raise ValidationError("decode: --beam must be >= 1")

        self.logger.info(f"🔍 Decoding {len(manifest)} utterances with beam {beam}")
        utterances = await asyncio.to_thread(prepare_utterances, stored, manifest, model.backbone.frontend)
        hyps = await asyncio.to_thread(transcribe, model, utterances, tokenizer, beam,
                                       stored.finetune.max_batch_seconds)

        run_dir = context.run_dir
        write_run_metadata(run_dir, "decode", stored.config_hash(), context.seed,
                           {"checkpoint": str(checkpoint), "beam": beam})
        hyp_path = run_dir / "hyp.tsv"
        save_transcripts(hyp_path, {u: hyps[u] for u in manifest.utt_ids})
        message = f"✅ decode: {len(hyps)} hypotheses in {hyp_path}"

        ref_path = context.get_arg("ref")
        if ref_path:
            wer, errors, words = self._score(hyp_path, ref_path, run_dir)
            message += f", WER {wer:.3f} ({errors}/{words})"
        return message

    async def _handle_score(self, context: CommandContext) -> str:
        hyp_path, ref_path = context.get_arg("hyp"), context.get_arg("ref")
        if not hyp_path or not ref_path:
            raise ValidationError("score: --hyp and --ref are required")
        wer, errors, words = self._score(hyp_path, ref_path, context.run_dir)
        return f"✅ score: WER {wer:.3f} ({errors} errors / {words} reference words)"

    def _score(self, hyp_path, ref_path, run_dir: Path):
        hyps, refs = load_transcripts(hyp_path), load_transcripts(ref_path)
        missing = [u for u in refs if u not in hyps]
        if missing:
            self.logger.warning(f"⚠️ {len(missing)} reference utterance(s) have no hypothesis, scored as empty")
        wer, errors, words = corpus_wer((hyps.get(u, ""), ref) for u, ref in refs.items())
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "score.json").write_text(json.dumps(
            {"wer": wer, "errors": errors, "words": words, "hyp": str(hyp_path), "ref": str(ref_path)},
            indent=2, sort_keys=True))
        return wer, errors, words
