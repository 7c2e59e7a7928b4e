"""Measured desk-scale reproductions. Minutes each; run with `pytest -m slow`."""

import json
import statistics
from pathlib import Path

import pytest

from cli.main import main
from core.config import load_run_config
from core.errors import EXIT_OK
from labeler.labels import load_label_file
from synth.corpus import SynthOptions, write_corpus
from trainer.checkpoint import MetricsLog
from trainer.finetune import finetune_loop
from trainer.pretrain import pretrain_loop

pytestmark = pytest.mark.slow

PRESETS = Path(__file__).resolve().parents[1] / "presets"


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return write_corpus(tmp_path_factory.mktemp("synth"), SynthOptions(num_utterances=50), seed=0)


def _data_overrides(corpus, num_classes=500):
    root = corpus.root
    return {
        "data.train_manifest": root / "train.tsv",
        "data.dev_manifest": root / "dev.tsv",
        "data.transcripts": root / "transcripts.tsv",
        "labels.source": "kmeans",
        "labels.path": corpus.phones_20ms,
        "labels.num_classes": num_classes,
    }


def _as_set_flags(overrides):
    flags = []
    for key, value in overrides.items():
        flags += ["--set", f"{key}={value}"]
    return flags


def _as_nested(overrides):
    nested = {}
    for key, value in overrides.items():
        *parents, leaf = key.split(".")
        node = nested
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = str(value) if isinstance(value, Path) else value
    return nested


def test_fast_config_beats_the_waveform_baseline_per_component(corpus, tmp_path):
    out = tmp_path / "compare"
    argv = ["compare", str(PRESETS / "hubert.yaml"), str(PRESETS / "s8.yaml"), "--steps", "200",
            "--out", str(out), *_as_set_flags(_data_overrides(corpus))]
    assert main(argv) == EXIT_OK
    report = json.loads((out / "compare.json").read_text())["report"]
    reductions = report["reductions"]
    assert reductions["feature_extraction"] > 0.8
    assert reductions["loss_calculation"] > 0.8
    assert reductions["transformer_encoding"] > 0.2
    assert report["speedup"] > 2.0


def test_comparing_a_config_with_itself_is_even(corpus, tmp_path):
    out = tmp_path / "compare"
    s4 = str(PRESETS / "s4.yaml")
    argv = ["compare", s4, s4, "--steps", "100", "--repeats", "3", "--out", str(out),
            *_as_set_flags(_data_overrides(corpus))]
    assert main(argv) == EXIT_OK
    speedup = json.loads((out / "compare.json").read_text())["report"]["speedup"]
    assert 0.95 <= speedup <= 1.05


def test_speedup_ordering_of_the_first_four_settings(corpus, tmp_path):
    overrides = _as_nested(_data_overrides(corpus))
    rates = {}
    for name in ("s1", "s2", "s3", "s4"):
        config = load_run_config(PRESETS / f"{name}.yaml", overrides)
        measured = []
        for repeat in range(3):
            result = pretrain_loop(config, tmp_path / f"{name}_{repeat}", steps=60, save_checkpoints=False)
            measured.append(result.profiler.total_report().steps_per_second)
        rates[name] = statistics.median(measured)
    assert rates["s1"] < rates["s2"] < rates["s3"] < rates["s4"]


def test_learning_sanity(corpus, tmp_path):
    clusters = 20
    labels_path = tmp_path / "kmeans" / "labels_20ms.txt"
    assert main(["kmeans", "--manifest", str(corpus.root / "train.tsv"), "--clusters", str(clusters),
                 "--out", str(tmp_path / "kmeans")]) == EXIT_OK
    assert load_label_file(labels_path)

    overrides = _as_nested({**_data_overrides(corpus, clusters), "labels.path": labels_path})
    overrides["pretrain"] = {"checkpoint_interval": 1000}
    config = load_run_config(PRESETS / "s3.yaml", overrides)
    pretrained = pretrain_loop(config, tmp_path / "pretrain", steps=2000)
    recent = [r["acc"] for r in MetricsLog(pretrained.metrics_path).read()[-100:]]
    assert statistics.mean(recent) > 3 * (1 / clusters)

    finetuned = finetune_loop(config, tmp_path / "finetune", tmp_path / "pretrain" / "last.pt", steps=1000)
    assert finetuned.best_wer < 0.5
    assert len(MetricsLog(tmp_path / "finetune" / "metrics.jsonl").read()) == 1000
