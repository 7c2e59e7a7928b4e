"""
Frame features to cluster: normalized MFCC decimated to 20 ms for the first
labeling iteration, or hidden states of a tapped encoder layer of a
pre-trained checkpoint for later ones.
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Union

import torch

from core.errors import ValidationError
from core.manifest import Manifest
from signal_frontend.dsp import DspParams, FeatureKind, FeatureSequence, cmvn, mfcc39
from signal_frontend.io import cached_features, feature_path, read_wav
from trainer.data import Utterance, collate, load_input
from trainer.pretrain import model_from_checkpoint

logger = logging.getLogger("lab.labeler.sources")

LABEL_FRAMESHIFT_MS = 20


def decimate(f: FeatureSequence, frameshift_ms: int) -> FeatureSequence:
    """Every k-th frame, k = frameshift_ms / current frameshift"""
    factor, rem = divmod(frameshift_ms, f.frameshift_ms)
    if rem or factor < 1:
        raise ValueError(f"cannot decimate {f.frameshift_ms} ms frames to {frameshift_ms} ms")
    return FeatureSequence(f.frames[::factor], frameshift_ms, f.kind)


def mfcc_features(manifest: Manifest, params: DspParams,
                  feature_dir: Optional[Union[str, Path]] = None) -> Dict[str, FeatureSequence]:
    """39-dim MFCC per utterance, CMVN'd, at the 20 ms label rate"""
    features = {}
    for entry in manifest:
        cached = feature_path(feature_dir, entry.utt_id, FeatureKind.MFCC) if feature_dir else None
        raw = cached_features(cached, FeatureKind.MFCC, params)
        if raw is None:
            raw = mfcc39(read_wav(entry.path), params)
        features[entry.utt_id] = decimate(cmvn(raw, params.cmvn_var_floor), LABEL_FRAMESHIFT_MS)
    return features


def resolve_layer(layer: Optional[int], default: int, num_layers: int) -> int:
    chosen = min(default, num_layers) if layer is None else layer
    if not 1 <= chosen <= num_layers:
        raise ValidationError(f"--layer: {chosen} outside the encoder's 1..{num_layers}")
    return chosen


def latent_features(manifest: Manifest, checkpoint: Union[str, Path],
                    layer: Optional[int] = None) -> Dict[str, FeatureSequence]:
    """Hidden states of one encoder layer, at the encoder's frameshift"""
    model, config, _ = model_from_checkpoint(checkpoint)
    backbone = model.backbone
    layer = resolve_layer(layer, config.labels.latent_layer, config.encoder.num_layers)
    params = DspParams.from_config(config.features)
    dtype = next(model.parameters()).dtype
    logger.info(f"🔍 Clustering layer {layer} of {checkpoint} ({config.frontend.frameshift_ms} ms frames)")

    features = {}
    with torch.no_grad():
        for entry in manifest:
            inputs = load_input(entry, config.frontend.kind, params, config.data.feature_dir or None)
            frames = backbone.frontend.config.output_length(len(inputs))
            batch = collate([Utterance(entry.utt_id, inputs, entry.duration_s, frames)], dtype)
            latents, _ = backbone.features(batch, None)
            hidden = backbone.encode(latents, batch.num_frames, taps=[layer]).taps[layer][0, :frames]
            features[entry.utt_id] = FeatureSequence(hidden.double().numpy(), config.frontend.frameshift_ms,
                                                     FeatureKind.LATENT)
    return features
