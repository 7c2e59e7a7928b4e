"""
Run configuration: YAML loading with environment expansion, typed sections
and whole-config validation.

A run config is deep-merged over core/config.yaml. Values may reference the
environment as ${VAR} or ${VAR:default}.
"""

import copy
import dataclasses
import hashlib
import json
import logging
import os
import re
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from core.errors import ConfigValidationError

logger = logging.getLogger("lab.config")

DEFAULT_CONFIG_PATH = Path(__file__).parent / "config.yaml"

FBANK_FRAMESHIFTS = (20, 40, 80)
PHONEME_CLASSES = 40


@dataclass
class RunSection:
    name: str = "lab"
    seed: int = 0
    deterministic: bool = False
    dtype: str = "float32"
    out_dir: str = "runs"


@dataclass
class DataSection:
    train_manifest: str = ""
    dev_manifest: str = ""
    transcripts: str = ""
    feature_dir: str = ""
    max_batch_seconds: float = 8.0
    scale_batch_with_frameshift: bool = False
    num_workers: int = 0
    prefetch: int = 2


@dataclass
class FeaturesSection:
    n_mels: int = 80
    window_ms: int = 25
    hop_ms: int = 10
    n_fft: int = 512
    log_floor: float = 1e-10
    cmvn_var_floor: float = 1e-8
    n_ceps: int = 13
    mfcc_mels: int = 40
    delta_window: int = 2


@dataclass
class FrontendSection:
    kind: str = "fbank"
    frameshift_ms: int = 20
    conv_channels: int = 512


@dataclass
class MaskingSection:
    placement: str = "pre"
    span_start_prob: float = 0.08
    span_len: int = 10


@dataclass
class LabelsSection:
    source: str = "kmeans"
    path: str = ""
    num_classes: int = 100
    frameshift_ms: int = 20
    latent_layer: int = 6


@dataclass
class EncoderSection:
    num_layers: int = 4
    model_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 256
    ils_layers: List[int] = field(default_factory=list)
    positional: bool = True


@dataclass
class LossSection:
    kind: str = "ce"
    temperature: float = 0.1
    codebook_dim: int = 256


@dataclass
class ScheduleSection:
    kind: str = "linear_warmup_linear_decay"
    peak: float = 5e-4
    warmup_steps: int = 160
    hold_steps: int = 0
    decay_steps: int = 0
    total_steps: int = 0
    final_fraction: float = 0.05


@dataclass
class OptimizerSection:
    betas: List[float] = field(default_factory=lambda: [0.9, 0.98])
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class PretrainSection:
    steps: int = 2000
    update_freq: int = 1
    checkpoint_interval: int = 500
    log_interval: int = 20
    schedule: ScheduleSection = field(default_factory=ScheduleSection)


@dataclass
class TokenizerSection:
    kind: str = "char"
    vocab_size: int = 1000
    path: str = ""


@dataclass
class FinetuneSection:
    checkpoint: str = ""
    steps: int = 1000
    freeze_steps: int = 100
    update_freq: int = 1
    eval_interval: int = 100
    log_interval: int = 20
    max_batch_seconds: float = 8.0
    mask_prob: float = 0.065
    mask_len: int = 10
    guard_policy: Optional[str] = None
    eval_beam: int = 1
    decode_beam: int = 50
    tokenizer: TokenizerSection = field(default_factory=TokenizerSection)
    schedule: ScheduleSection = field(default_factory=lambda: ScheduleSection(
        kind="tristage", peak=1e-3, warmup_steps=100, hold_steps=400, decay_steps=500))


@dataclass
class ProfilerSection:
    enabled: bool = True
    window_steps: int = 200


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    features: FeaturesSection = field(default_factory=FeaturesSection)
    frontend: FrontendSection = field(default_factory=FrontendSection)
    masking: MaskingSection = field(default_factory=MaskingSection)
    labels: LabelsSection = field(default_factory=LabelsSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    loss: LossSection = field(default_factory=LossSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    profiler: ProfilerSection = field(default_factory=ProfilerSection)

    @property
    def guard_policy(self) -> str:
        return self.finetune.guard_policy or "skip"

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def model_hash(self) -> str:
        """Hash of every section that shapes pre-trained parameters"""
        model_sections = {
            "features": dataclasses.asdict(self.features),
            "frontend": dataclasses.asdict(self.frontend),
            "encoder": dataclasses.asdict(self.encoder),
        }
        payload = json.dumps(model_sections, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def validate(self) -> "RunConfig":
        problems = []
        fe, enc = self.frontend, self.encoder

        if fe.kind not in ("fbank", "waveform"):
            problems.append(f"frontend.kind: must be 'fbank' or 'waveform', got {fe.kind!r}")
        elif fe.kind == "fbank" and fe.frameshift_ms not in FBANK_FRAMESHIFTS:
            problems.append(f"frontend.frameshift_ms: must be one of {FBANK_FRAMESHIFTS} "
                            f"when frontend.kind=fbank, got {fe.frameshift_ms}")
        elif fe.kind == "waveform" and fe.frameshift_ms != 20:
            problems.append("frontend.frameshift_ms: the waveform encoder is fixed at 20 ms "
                            f"when frontend.kind=waveform, got {fe.frameshift_ms}")

        if self.masking.placement not in ("pre", "post"):
            problems.append(f"masking.placement: must be 'pre' or 'post', got {self.masking.placement!r}")
        elif self.masking.placement == "pre" and fe.kind == "waveform":
            problems.append("masking.placement: pre-masking needs a spectrogram, "
                            "incompatible with frontend.kind=waveform")
        if not 0.0 <= self.masking.span_start_prob <= 1.0:
            problems.append("masking.span_start_prob: must lie in [0, 1]")
        if self.masking.span_len < 1:
            problems.append("masking.span_len: must be >= 1")

        if self.loss.kind not in ("ce", "hubert"):
            problems.append(f"loss.kind: must be 'ce' or 'hubert', got {self.loss.kind!r}")
        if self.loss.temperature <= 0:
            problems.append("loss.temperature: must be > 0")
        if self.labels.num_classes < 2:
            problems.append(f"labels.num_classes: loss.kind={self.loss.kind} requires a cluster count C >= 2")
        if self.labels.source not in ("kmeans", "phoneme"):
            problems.append(f"labels.source: must be 'kmeans' or 'phoneme', got {self.labels.source!r}")
        elif self.labels.source == "phoneme" and self.labels.num_classes != PHONEME_CLASSES:
            problems.append(f"labels.num_classes: phoneme labels have {PHONEME_CLASSES} classes, "
                            f"got {self.labels.num_classes}")
        if self.labels.frameshift_ms != 20:
            problems.append("labels.frameshift_ms: label files are aligned at 20 ms and decimated "
                            f"to coarser rates, got {self.labels.frameshift_ms}")

        if enc.model_dim % enc.num_heads != 0:
            problems.append(f"encoder.model_dim: {enc.model_dim} not divisible by encoder.num_heads={enc.num_heads}")
        bad_taps = [l for l in enc.ils_layers if not 1 <= l <= enc.num_layers]
        if bad_taps:
            problems.append(f"encoder.ils_layers: {bad_taps} outside [1, {enc.num_layers}] (encoder.num_layers)")

        for section in ("pretrain", "finetune"):
            sched = getattr(self, section).schedule
            if sched.kind not in ("linear_warmup_linear_decay", "tristage"):
                problems.append(f"{section}.schedule.kind: unknown schedule {sched.kind!r}")
            if getattr(self, section).update_freq < 1:
                problems.append(f"{section}.update_freq: must be >= 1")

        ft = self.finetune
        if ft.tokenizer.kind not in ("char", "subword"):
            problems.append(f"finetune.tokenizer.kind: must be 'char' or 'subword', got {ft.tokenizer.kind!r}")
        if ft.guard_policy not in (None, "skip", "fail"):
            problems.append(f"finetune.guard_policy: must be 'skip' or 'fail', got {ft.guard_policy!r}")
        if fe.frameshift_ms == 80 and ft.tokenizer.kind == "char" and ft.guard_policy is None:
            problems.append("finetune.guard_policy: 80 ms frames with character targets "
                            "(frontend.frameshift_ms, finetune.tokenizer.kind) require an explicit "
                            "'skip' or 'fail' policy")
        if ft.freeze_steps < 0:
            problems.append("finetune.freeze_steps: must be >= 0")

        if self.run.dtype not in ("float32", "float64"):
            problems.append(f"run.dtype: must be float32 or float64, got {self.run.dtype!r}")
        if self.profiler.window_steps < 1:
            problems.append("profiler.window_steps: must be >= 1")

        if problems:
            raise ConfigValidationError(problems)
        return self


def _substitute_env_vars(content: str) -> str:
    """Substitute ${VAR_NAME:default_value} or ${VAR_NAME} in config text"""
    pattern = r'\$\{([^}:]+)(?::([^}]*))?\}'

    def replace_var(match):
        var_name = match.group(1)
        default_value = match.group(2) if match.group(2) is not None else match.group(0)
        return os.getenv(var_name, default_value)

    return re.sub(pattern, replace_var, content)


def _read_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path, "r") as f:
        content = _substitute_env_vars(f.read())
    data = yaml.safe_load(content) or {}
    if not isinstance(data, dict):
        raise ConfigValidationError([f"{path}: top level must be a mapping"])
    return data


def _deep_merge(base: Dict[str, Any], overlay: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _get_default_config() -> Dict[str, Any]:
    """In-code defaults used when core/config.yaml is missing"""
    return RunConfig().to_dict()


def load_defaults() -> Dict[str, Any]:
    try:
        if DEFAULT_CONFIG_PATH.exists():
            return _deep_merge(_get_default_config(), _read_yaml(DEFAULT_CONFIG_PATH))
        logger.warning("⚠️ No core/config.yaml found, using in-code defaults")
    except yaml.YAMLError as e:
        logger.error(f"❌ Error loading default config: {e}")
    return _get_default_config()


def _build(cls, data: Dict[str, Any], prefix: str, problems: List[str]):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            problems.append(f"{prefix}{key}: unknown config key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        hint = hints[f.name]
        if dataclasses.is_dataclass(hint):
            if not isinstance(value, dict):
                problems.append(f"{prefix}{f.name}: expected a mapping")
                continue
            kwargs[f.name] = _build(hint, value, f"{prefix}{f.name}.", problems)
        else:
            kwargs[f.name] = _coerce(value, hint, f"{prefix}{f.name}", problems)
    return cls(**kwargs)


def _coerce(value: Any, hint: Any, name: str, problems: List[str]) -> Any:
    origin = typing.get_origin(hint)
    if origin is Union:  # Optional[...]
        if value is None:
            return None
        hint = [a for a in typing.get_args(hint) if a is not type(None)][0]
        origin = typing.get_origin(hint)
    if origin in (list, List):
        if not isinstance(value, list):
            problems.append(f"{name}: expected a list")
            return value
        (item,) = typing.get_args(hint) or (Any,)
        return [_coerce(v, item, name, problems) for v in value]
    try:
        if hint is bool:
            if isinstance(value, str):
                return value.strip().lower() in ("true", "1", "yes", "on")
            return bool(value)
        if hint in (int, float, str):
            return hint(value)
    except (TypeError, ValueError):
        problems.append(f"{name}: cannot interpret {value!r} as {hint.__name__}")
    return value


def build_run_config(data: Dict[str, Any]) -> RunConfig:
    problems: List[str] = []
    config = _build(RunConfig, data, "", problems)
    if problems:
        raise ConfigValidationError(problems)
    return config


def load_run_config(path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Dict[str, Any]] = None,
                    validate: bool = True) -> RunConfig:
    """Load defaults, overlay the run config file and overrides, then validate"""
    data = load_defaults()
    if path is not None:
        logger.info(f"🔍 Loading run config from {path}")
        data = _deep_merge(data, _read_yaml(path))
    if overrides:
        data = _deep_merge(data, overrides)
    config = build_run_config(data)
    return config.validate() if validate else config
