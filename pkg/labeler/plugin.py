"""
Labeler Plugin - k-means pseudo-labels for masked prediction

`kmeans` clusters 20 ms MFCC frames (first iteration) or the hidden states of
an encoder layer of a pre-trained checkpoint (`--checkpoint`, `--layer`) and
writes codebook.bin plus a label file with one id per frame.
"""

import asyncio
import logging
from pathlib import Path
from typing import List, Optional

import numpy as np

from core.errors import ValidationError
from core.manifest import Manifest
from core.plugin import CommandContext, LabPlugin
from core.runtime import write_run_metadata
from labeler.kmeans import cluster_purity, kmeans_assign, kmeans_fit
from labeler.labels import load_label_file, write_label_file
from labeler.sources import latent_features, mfcc_features
from signal_frontend.dsp import DspParams

ITERATION_TWO_CLUSTERS = 500


class LabelerPlugin(LabPlugin):
    def __init__(self, logger: Optional[logging.Logger] = None):
        super().__init__("labeler", logger=logger)
        self.description = "k-means clustering of MFCC or encoder latents into frame labels"
        self.default_iterations = 20

    def get_commands(self) -> List[str]:
        return ["kmeans"]

    async def handle_command(self, context: CommandContext) -> Optional[str]:
        if context.command == "kmeans":
            return await self._handle_kmeans(context)
        return f"Unknown command: {context.command}"

    async def _handle_kmeans(self, context: CommandContext) -> str:
        config = context.config
        manifest_path = context.get_arg("manifest") or (config.data.train_manifest if config else None)
        if not manifest_path:
            raise ValidationError("kmeans: --manifest (or data.train_manifest) is required")
        manifest = Manifest.load(manifest_path).validate()
        checkpoint = context.get_arg("checkpoint")

        num_clusters = context.get_arg("clusters")
        if num_clusters is None:
            num_clusters = ITERATION_TWO_CLUSTERS if checkpoint else (config.labels.num_classes if config else 100)
        if num_clusters < 2:
            raise ValidationError("kmeans: --clusters must be >= 2")

        if checkpoint:
            features = await asyncio.to_thread(latent_features, manifest, checkpoint, context.get_arg("layer"))
        else:
            params = DspParams.from_config(config.features) if config else DspParams()
            feature_dir = context.get_arg("feature_dir") or (config.data.feature_dir if config else None)
            features = await asyncio.to_thread(mfcc_features, manifest, params, feature_dir or None)

        run_dir = context.run_dir
        write_run_metadata(run_dir, "kmeans", config.config_hash() if config else None, context.seed,
                           {"clusters": num_clusters, "checkpoint": str(checkpoint) if checkpoint else None})
        rng = np.random.default_rng(context.seed)
        workers = 1 if context.deterministic else 4
        iterations = context.get_arg("iterations") or self.default_iterations
        self.logger.info(f"🔍 k-means C={num_clusters} over {sum(f.num_frames for f in features.values())} "
                         f"frames from {len(features)} utterances")
        codebook = await asyncio.to_thread(kmeans_fit, list(features.values()), num_clusters, iterations,
                                           rng, workers, context.get_arg("max_frames"))

        labels = {utt: kmeans_assign(f, codebook, workers) for utt, f in features.items()}
        codebook.save(run_dir / "codebook.bin")
        frameshift = next(iter(labels.values())).frameshift_ms
        label_path = Path(context.get_arg("labels_out") or run_dir / f"labels_{frameshift}ms.txt")
        write_label_file(label_path, labels)

        message = (f"✅ kmeans: C={num_clusters}, distortion {codebook.distortions[-1]:.4f}, "
                   f"labels at {frameshift} ms in {label_path}")
        truth_path = context.get_arg("truth")
        if truth_path:
            message += f", purity {self._purity(labels, truth_path):.3f}"
        return message

    def _purity(self, labels, truth_path) -> float:
        truth = load_label_file(truth_path)
        predicted, reference = [], []
        for utt, seq in labels.items():
            if utt not in truth:
                continue
            n = min(len(seq), len(truth[utt]))
            predicted.append(seq.ids[:n])
            reference.append(truth[utt].ids[:n])
        if not predicted:
            raise ValidationError(f"{truth_path}: no utterance in common with the clustered manifest")
        purity = cluster_purity(np.concatenate(predicted), np.concatenate(reference))
        self.logger.info(f"✅ Cluster purity against {truth_path}: {purity:.3f}")
        return purity
