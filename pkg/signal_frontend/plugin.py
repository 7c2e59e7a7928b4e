"""
Feature Extraction Plugin - offline Fbank / MFCC extraction

Reads an audio manifest, computes features for every utterance in parallel
worker threads and writes one binary feature file per utterance. Outputs
newer than their audio and extracted with the same parameters are skipped,
so a re-run over an unchanged manifest rewrites nothing.
"""

import asyncio
import logging
from pathlib import Path
from typing import List, Optional

from core.errors import LabError, ValidationError
from core.manifest import Manifest, ManifestEntry
from core.plugin import CommandContext, LabPlugin
from signal_frontend.dsp import DspParams, FeatureKind, extract
from signal_frontend.io import feature_path, read_wav, save_features_async, stale_reason


class FeatureExtractionPlugin(LabPlugin):
    def __init__(self, logger: Optional[logging.Logger] = None):
        super().__init__("signal_frontend", logger=logger)
        self.description = "Offline Fbank / 39-dim MFCC extraction into binary feature files"
        self.max_concurrency = 4

    def get_commands(self) -> List[str]:
        return ["extract"]

    async def handle_command(self, context: CommandContext) -> Optional[str]:
        if context.command == "extract":
            return await self._handle_extract(context)
        return f"Unknown command: {context.command}"

    async def _handle_extract(self, context: CommandContext) -> str:
        config = context.config
        manifest_path = context.get_arg("manifest") or (config.data.train_manifest if config else None)
        if not manifest_path:
            raise ValidationError("extract: --manifest or --config is required")
        kind = FeatureKind(context.get_arg("kind") or "fbank")
        if kind is FeatureKind.LATENT:
            raise ValidationError("extract: latent features come from a checkpoint, use --kind fbank or mfcc")

        manifest = Manifest.load(manifest_path).validate()
        out_dir = Path(context.get_arg("feature_dir") or (config.data.feature_dir if config else "")
                       or context.run_dir / "features")
        out_dir.mkdir(parents=True, exist_ok=True)
        params = DspParams.from_config(config.features) if config else DspParams()

        self.logger.info(f"🔍 Extracting {kind.value} for {len(manifest)} utterances into {out_dir}")
        semaphore = asyncio.Semaphore(1 if context.deterministic else self.max_concurrency)
        results = await asyncio.gather(
            *(self._extract_one(entry, kind, params, out_dir, semaphore) for entry in manifest),
            return_exceptions=True,
        )

        written = sum(1 for r in results if r == "written")
        skipped = sum(1 for r in results if r == "skipped")
        failures = [(e.utt_id, r) for e, r in zip(manifest, results) if isinstance(r, Exception)]
        for utt_id, error in failures:
            self.logger.error(f"❌ {utt_id}: {error}")
        summary = f"{written} written, {skipped} up to date, {len(failures)} failed"
        if failures:
            raise LabError(f"extract: {summary}")
        return f"✅ extract: {summary} ({out_dir})"

    async def _extract_one(self, entry: ManifestEntry, kind: FeatureKind, params: DspParams,
                           out_dir: Path, semaphore: asyncio.Semaphore) -> str:
        target = feature_path(out_dir, entry.utt_id, kind)
        if stale_reason(target, kind, params) is None and target.stat().st_mtime >= entry.path.stat().st_mtime:
            return "skipped"
        async with semaphore:
            waveform = await asyncio.to_thread(read_wav, entry.path)
            features = await asyncio.to_thread(extract, waveform, kind, params)
            await save_features_async(target, features, params)
        self.logger.info(f"{entry.utt_id}: T={features.num_frames} D={features.dim}")
        return "written"
