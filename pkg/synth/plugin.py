"""
Synth Plugin - deterministic tone corpus for desk-scale experiments

`synth` writes audio/*.wav, train.tsv, dev.tsv, transcripts.tsv and the
ground-truth frame classes (phones_10ms.txt, phones_20ms.txt). The same seed
always produces byte-identical files.
"""

import asyncio
import logging
from typing import List, Optional

from core.errors import ValidationError
from core.plugin import CommandContext, LabPlugin
from core.runtime import write_run_metadata
from synth.corpus import SynthOptions, write_corpus


class SynthPlugin(LabPlugin):
    def __init__(self, logger: Optional[logging.Logger] = None):
        super().__init__("synth", logger=logger)
        self.description = "Synthetic tone-letter corpus with transcripts and frame labels"

    def get_commands(self) -> List[str]:
        return ["synth"]

    async def handle_command(self, context: CommandContext) -> Optional[str]:
        if context.command == "synth":
            return await self._handle_synth(context)
        return f"Unknown command: {context.command}"

    def _options(self, context: CommandContext) -> SynthOptions:
        defaults = SynthOptions()
        try:
            return SynthOptions(
                num_utterances=context.get_arg("num_utts") or defaults.num_utterances,
                words_per_utterance=tuple(context.get_arg("words") or defaults.words_per_utterance),
                letter_seconds=tuple(context.get_arg("letter_seconds") or defaults.letter_seconds),
                gap_seconds=defaults.gap_seconds if context.get_arg("gap_seconds") is None
                else context.get_arg("gap_seconds"),
                tone_classes=context.get_arg("tone_classes") or defaults.tone_classes,
                dev_fraction=defaults.dev_fraction if context.get_arg("dev_fraction") is None
                else context.get_arg("dev_fraction"),
            )
        except ValueError as e:
            raise ValidationError(f"synth: {e}") from e

    async def _handle_synth(self, context: CommandContext) -> str:
        options = self._options(context)
        out_dir = context.run_dir
        self.logger.info(f"🔍 Synthesizing {options.num_utterances} utterances (seed {context.seed}) into {out_dir}")
        corpus = await asyncio.to_thread(write_corpus, out_dir, options, context.seed)
        write_run_metadata(out_dir, "synth", None, context.seed,
                           {"num_utterances": options.num_utterances, "tone_classes": options.tone_classes})
        return (f"✅ synth: {len(corpus.train)} train / {len(corpus.dev)} dev utterances, "
                f"{corpus.num_classes} frame classes in {out_dir}")
