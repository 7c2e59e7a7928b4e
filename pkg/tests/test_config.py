from pathlib import Path

import pytest
import yaml

from core.config import RunConfig, build_run_config, load_defaults, load_run_config
from core.errors import ConfigValidationError, EXIT_VALIDATION

PRESET_DIR = Path(__file__).resolve().parent.parent / "presets"
PRESETS = sorted(p.stem for p in PRESET_DIR.glob("*.yaml"))


def test_defaults_validate():
    config = load_run_config()
    assert config.frontend.kind == "fbank"
    assert config.frontend.frameshift_ms == 20
    assert config.masking.span_start_prob == 0.08
    assert config.masking.span_len == 10
    assert config.guard_policy == "skip"


def test_in_code_defaults_match_yaml_shape():
    assert set(load_defaults()) == set(RunConfig().to_dict())


@pytest.mark.parametrize("name", PRESETS)
def test_every_preset_validates(name):
    config = load_run_config(PRESET_DIR / f"{name}.yaml")
    assert config.run.name == name


def test_preset_rows():
    s4 = load_run_config(PRESET_DIR / "s4.yaml")
    s6 = load_run_config(PRESET_DIR / "s6.yaml")
    s8 = load_run_config(PRESET_DIR / "s8.yaml")
    hubert = load_run_config(PRESET_DIR / "hubert.yaml")
    assert (s4.frontend.frameshift_ms, s4.loss.kind) == (40, "ce")
    assert (s6.frontend.frameshift_ms, s6.finetune.tokenizer.kind) == (80, "subword")
    assert s8.encoder.ils_layers == [2]
    assert s8.labels.num_classes == 40
    assert (hubert.frontend.kind, hubert.masking.placement, hubert.loss.kind) == ("waveform", "post", "hubert")


def test_environment_expansion(tmp_path, monkeypatch):
    monkeypatch.setenv("LAB_DATA_DIR", str(tmp_path / "corpus"))
    config = load_run_config()
    assert config.data.train_manifest == str(tmp_path / "corpus" / "train.tsv")


def test_environment_default_used_when_unset(monkeypatch):
    monkeypatch.delenv("LAB_DATA_DIR", raising=False)
    assert load_run_config().data.train_manifest == "data/synth/train.tsv"


def test_run_file_and_overrides_are_layered(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"encoder": {"num_layers": 6}, "loss": {"kind": "hubert"}}))
    config = load_run_config(path, {"encoder": {"model_dim": 32}})
    assert config.encoder.num_layers == 6
    assert config.encoder.model_dim == 32
    assert config.encoder.num_heads == 4
    assert config.loss.kind == "hubert"


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigValidationError, match="encoder.depth: unknown config key"):
        load_run_config(None, {"encoder": {"depth": 3}})


def test_uncoercible_value_is_rejected():
    with pytest.raises(ConfigValidationError, match="encoder.num_layers"):
        load_run_config(None, {"encoder": {"num_layers": "deep"}})


@pytest.mark.parametrize("overrides, field", [
    ({"frontend": {"frameshift_ms": 30}}, "frontend.frameshift_ms"),
    ({"frontend": {"kind": "waveform", "frameshift_ms": 40}}, "frontend.frameshift_ms"),
    ({"frontend": {"kind": "waveform"}, "masking": {"placement": "pre"}}, "masking.placement"),
    ({"labels": {"num_classes": 1}}, "labels.num_classes"),
    ({"encoder": {"ils_layers": [5]}}, "encoder.ils_layers"),
    ({"encoder": {"model_dim": 30, "num_heads": 4}}, "encoder.model_dim"),
    ({"labels": {"source": "phoneme", "num_classes": 100}}, "labels.num_classes"),
    ({"frontend": {"frameshift_ms": 80}}, "finetune.guard_policy"),
    ({"finetune": {"guard_policy": "ignore"}}, "finetune.guard_policy"),
    ({"masking": {"span_start_prob": 1.5}}, "masking.span_start_prob"),
])
def test_inconsistent_combinations_name_the_field(overrides, field):
    with pytest.raises(ConfigValidationError) as excinfo:
        load_run_config(None, overrides)
    assert any(problem.startswith(field) for problem in excinfo.value.problems)
    assert excinfo.value.exit_code == EXIT_VALIDATION


def test_eighty_ms_char_targets_need_an_explicit_policy():
    for policy in ("skip", "fail"):
        config = load_run_config(None, {"frontend": {"frameshift_ms": 80}, "finetune": {"guard_policy": policy}})
        assert config.guard_policy == policy
    subword = load_run_config(None, {"frontend": {"frameshift_ms": 80},
                                     "finetune": {"tokenizer": {"kind": "subword"}}})
    assert subword.guard_policy == "skip"


def test_all_problems_are_reported_together():
    with pytest.raises(ConfigValidationError) as excinfo:
        load_run_config(None, {"frontend": {"frameshift_ms": 30}, "loss": {"kind": "mse"},
                               "encoder": {"ils_layers": [0]}})
    assert len(excinfo.value.problems) == 3


def test_validation_can_be_deferred():
    config = load_run_config(None, {"frontend": {"frameshift_ms": 30}}, validate=False)
    with pytest.raises(ConfigValidationError):
        config.validate()


def test_hashes():
    a = load_run_config()
    b = load_run_config(None, {"pretrain": {"steps": 10}})
    c = load_run_config(None, {"encoder": {"num_layers": 2}})
    assert a.config_hash() != b.config_hash()
    assert a.model_hash() == b.model_hash()
    assert a.model_hash() != c.model_hash()
    assert build_run_config(a.to_dict()).config_hash() == a.config_hash()
