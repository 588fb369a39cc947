"""End-to-end checks of the command-line interface.

Commands run in-process through ``main(argv)`` so exit codes and
stdout/stderr are observable without subprocesses. Training smokes use
one-epoch runs on the shared tiny dataset.
"""

import json
import wave

import numpy as np
import pytest

from tsekit.audio_io import SAMPLE_RATE, read_wav
from tsekit.checkpoint import load_checkpoint, save_checkpoint
from tsekit.cli import EXIT_CODES, OUT_ROOT_ENV, main
from tsekit.data import dataset_paths
from tsekit.errors import (
    AudioFormatError,
    ConfigError,
    DivergenceError,
    ManifestError,
    VocabularyError,
)
from tsekit.types import Vocabulary

RUN_TOML = """\
[model]
clue_mode = "class"
win_length = 16
hop_length = 8
feature_dim = 16
bottleneck_dim = 16
hidden_dim = 24
kernel_size = 3
blocks_per_stack = 2
mixture_stacks = 1
mask_stacks = 1
enroll_blocks = 2

[train]
max_epochs = 3
batch_size = 4
learning_rate = 1e-3
seed = 0
"""

SIM_TOML = """\
[simulate]
classes = ["tone_250", "chirp_480"]
duration_s = 0.4
events_min = 1
events_max = 1
inactive_fraction = 0.25
event_duration_s = [0.2, 0.3]
pool_size = 2
seed = 11

[simulate.splits]
train = 3
valid = 2
"""


@pytest.fixture(scope="module")
def cli_space(tiny_dataset, tmp_path_factory):
    """Config file plus checkpoints trained once through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "run.toml"
    config.write_text(RUN_TOML)
    data = str(tiny_dataset["root"])

    ckpt = root / "model.pt"
    assert main(["train", "--config", str(config), "--data", data,
                 "--out", str(ckpt), "--epochs", "1", "--set", "train.seed=9"]) == 0

    mixed = root / "mixed.pt"
    assert main(["--quiet", "train", "--config", str(config), "--data", data,
                 "--out", str(mixed), "--epochs", "1", "--clue-mode", "mixed"]) == 0

    clf = root / "clf.pt"
    assert main(["--quiet", "train", "--config", str(config), "--data", data,
                 "--out", str(clf), "--arch", "sec", "--epochs", "1"]) == 0

    return {"root": root, "config": config, "data": tiny_dataset["root"],
            "ckpt": ckpt, "mixed": mixed, "clf": clf}


def test_documented_exit_codes():
    assert EXIT_CODES == (
        (ConfigError, 2),
        (ManifestError, 3),
        (VocabularyError, 4),
        (AudioFormatError, 5),
        (DivergenceError, 6),
    )


class TestSimulate:
    def test_writes_dataset(self, tmp_path, capsys):
        config = tmp_path / "sim.toml"
        config.write_text(SIM_TOML)
        out = tmp_path / "data"
        assert main(["simulate", "--config", str(config), "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        assert "train:" in printed and "valid:" in printed
        paths = dataset_paths(out)
        assert Vocabulary.load(paths["vocab"]).names == ["tone_250", "chirp_480"]
        assert len(paths["train"].read_text().splitlines()) == 3

    def test_set_overrides_split_size(self, tmp_path):
        config = tmp_path / "sim.toml"
        config.write_text(SIM_TOML)
        out = tmp_path / "data"
        assert main(["simulate", "--config", str(config), "--out", str(out),
                     "--set", "simulate.splits.train=5"]) == 0
        assert len((out / "train.jsonl").read_text().splitlines()) == 5

    def test_missing_config_exits_2(self, tmp_path, capsys):
        code = main(["simulate", "--config", str(tmp_path / "nope.toml"),
                     "--out", str(tmp_path / "d")])
        assert code == 2
        assert capsys.readouterr().err.startswith("error:")


class TestTrain:
    def test_checkpoint_records_flag_overrides(self, cli_space):
        bundle = load_checkpoint(cli_space["ckpt"])
        assert bundle.kind == "tse"
        # --epochs beat the file's max_epochs=3; --set beat the file's seed.
        assert bundle.config.train.max_epochs == 1
        assert bundle.config.train.seed == 9
        assert bundle.epoch == 1
        bundle.build()

    def test_classifier_checkpoint(self, cli_space, tiny_dataset):
        bundle = load_checkpoint(cli_space["clf"])
        assert bundle.kind == "sec"
        assert bundle.vocabulary == tiny_dataset["vocabulary"]
        bundle.build()

    def test_class_count_mismatch_exits_2(self, cli_space, tmp_path, capsys):
        config = tmp_path / "run.toml"
        config.write_text(RUN_TOML.replace("[model]", "[model]\nnum_classes = 7"))
        code = main(["train", "--config", str(config), "--data", str(cli_space["data"]),
                     "--out", str(tmp_path / "m.pt"), "--epochs", "1"])
        assert code == 2
        assert "7 classes" in capsys.readouterr().err

    def test_unknown_split_exits_2(self, cli_space, tmp_path, capsys):
        code = main(["train", "--config", str(cli_space["config"]),
                     "--data", str(cli_space["data"]), "--out", str(tmp_path / "m.pt"),
                     "--epochs", "1", "--train-split", "nope"])
        assert code == 2
        assert "nope.jsonl" in capsys.readouterr().err

    def test_malformed_set_flag_exits_2(self, cli_space, tmp_path, capsys):
        code = main(["train", "--config", str(cli_space["config"]),
                     "--data", str(cli_space["data"]), "--out", str(tmp_path / "m.pt"),
                     "--set", "train.max_epochs"])
        assert code == 2
        assert "section.key=value" in capsys.readouterr().err

    def test_resume_that_never_improves_exits_6(self, cli_space, tmp_path, capsys):
        bundle = load_checkpoint(cli_space["ckpt"])
        stale = tmp_path / "stale.pt"
        save_checkpoint(stale, "tse", bundle.config, bundle.vocabulary,
                        bundle.build(), epoch=1, valid_loss=float("-inf"))
        code = main(["--quiet", "train", "--config", str(cli_space["config"]),
                     "--data", str(cli_space["data"]), "--out", str(tmp_path / "m.pt"),
                     "--epochs", "2", "--resume", str(stale)])
        assert code == 6
        assert "never improved" in capsys.readouterr().err


class TestExtract:
    def test_labels_clue_writes_wav(self, cli_space, tiny_dataset, tmp_path, capsys):
        manifest = tiny_dataset["manifests"]["test"]
        mixture = manifest.resolve(next(iter(manifest)).mixture_path)
        names = tiny_dataset["vocabulary"].names
        out = tmp_path / "est.wav"
        code = main(["extract", "--checkpoint", str(cli_space["ckpt"]),
                     "--input", str(mixture), "--output", str(out),
                     "--labels", f"{names[0]},{names[1]}"])
        assert code == 0
        assert "extracted:" in capsys.readouterr().out
        estimate = read_wav(out)
        original = read_wav(mixture)
        assert len(estimate.samples) == len(original.samples)
        assert estimate.sample_rate == original.sample_rate

    def test_enroll_clue_writes_wav(self, cli_space, tiny_dataset, tmp_path):
        manifest = tiny_dataset["manifests"]["test"]
        mixture = manifest.resolve(next(iter(manifest)).mixture_path)
        clip = sorted((tiny_dataset["root"] / "enroll").glob("*/*.wav"))[0]
        out = tmp_path / "est.wav"
        code = main(["extract", "--checkpoint", str(cli_space["mixed"]),
                     "--input", str(mixture), "--output", str(out),
                     "--enroll", str(clip)])
        assert code == 0
        assert out.exists()

    def test_requires_exactly_one_clue(self, cli_space, tiny_dataset, tmp_path, capsys):
        manifest = tiny_dataset["manifests"]["test"]
        mixture = str(manifest.resolve(next(iter(manifest)).mixture_path))
        base = ["extract", "--checkpoint", str(cli_space["ckpt"]),
                "--input", mixture, "--output", str(tmp_path / "e.wav")]
        assert main(base) == 2
        assert main(base + ["--labels", "tone_250", "--enroll", mixture]) == 2
        assert "exactly one" in capsys.readouterr().err

    def test_unknown_class_exits_4(self, cli_space, tiny_dataset, tmp_path, capsys):
        manifest = tiny_dataset["manifests"]["test"]
        mixture = str(manifest.resolve(next(iter(manifest)).mixture_path))
        code = main(["extract", "--checkpoint", str(cli_space["ckpt"]),
                     "--input", mixture, "--output", str(tmp_path / "e.wav"),
                     "--labels", "kazoo"])
        assert code == 4
        assert "unknown class name" in capsys.readouterr().err

    def test_stereo_input_exits_5(self, cli_space, tmp_path, capsys):
        bad = tmp_path / "stereo.wav"
        with wave.open(str(bad), "wb") as wf:
            wf.setnchannels(2)
            wf.setsampwidth(2)
            wf.setframerate(SAMPLE_RATE)
            wf.writeframes(np.zeros(800, dtype="<i2").tobytes())
        code = main(["extract", "--checkpoint", str(cli_space["ckpt"]),
                     "--input", str(bad), "--output", str(tmp_path / "e.wav"),
                     "--labels", "tone_250"])
        assert code == 5
        assert "expected mono" in capsys.readouterr().err

    def test_out_root_reroots_relative_output(self, cli_space, tiny_dataset, tmp_path,
                                              monkeypatch):
        manifest = tiny_dataset["manifests"]["test"]
        mixture = str(manifest.resolve(next(iter(manifest)).mixture_path))
        monkeypatch.setenv(OUT_ROOT_ENV, str(tmp_path))
        code = main(["extract", "--checkpoint", str(cli_space["ckpt"]),
                     "--input", mixture, "--output", "nested/est.wav",
                     "--labels", "tone_250"])
        assert code == 0
        assert (tmp_path / "nested" / "est.wav").exists()
        # Absolute outputs are left alone.
        absolute = tmp_path / "abs.wav"
        code = main(["extract", "--checkpoint", str(cli_space["ckpt"]),
                     "--input", mixture, "--output", str(absolute),
                     "--labels", "tone_250"])
        assert code == 0
        assert absolute.exists()


class TestEvaluate:
    def test_writes_report_and_prints_summary(self, cli_space, tmp_path, capsys):
        manifest = dataset_paths(cli_space["data"])["test"]
        prefix = tmp_path / "report"
        code = main(["evaluate", "--checkpoint", str(cli_space["ckpt"]),
                     "--manifest", str(manifest), "--report", str(prefix), "--csv"])
        assert code == 0
        printed = capsys.readouterr().out
        assert "mean_sdri_db:" in printed
        assert "mean_atten_mix_inactive_db:" in printed
        summary = json.loads(prefix.with_suffix(".summary.json").read_text())
        assert "mean_sdri_db" in summary
        rows = prefix.with_suffix(".jsonl").read_text().splitlines()
        assert len(rows) > 0
        assert prefix.with_suffix(".csv").exists()

    def test_malformed_manifest_exits_3(self, cli_space, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{oops\n")
        code = main(["evaluate", "--checkpoint", str(cli_space["ckpt"]),
                     "--manifest", str(bad), "--report", str(tmp_path / "r")])
        assert code == 3
        assert "bad.jsonl:1:" in capsys.readouterr().err

    def test_out_of_vocabulary_manifest_exits_4(self, cli_space, tmp_path, capsys):
        source = dataset_paths(cli_space["data"])["test"]
        record = json.loads(source.read_text().splitlines()[0])
        record["active_classes"] = sorted(set(record["active_classes"]) | {99})
        poisoned = tmp_path / "poisoned.jsonl"
        poisoned.write_text(json.dumps(record) + "\n")
        code = main(["evaluate", "--checkpoint", str(cli_space["ckpt"]),
                     "--manifest", str(poisoned), "--report", str(tmp_path / "r")])
        assert code == 4
        assert "class id 99" in capsys.readouterr().err


class TestRetrainWeak:
    def test_smoke(self, cli_space, tmp_path, capsys):
        paths = dataset_paths(cli_space["data"])
        out = tmp_path / "weak.pt"
        code = main(["--quiet", "retrain-weak", "--checkpoint", str(cli_space["ckpt"]),
                     "--classifier", str(cli_space["clf"]),
                     "--manifest", str(paths["train"]),
                     "--valid-manifest", str(paths["valid"]),
                     "--out", str(out), "--epochs", "1", "--lr", "1e-3"])
        assert code == 0
        bundle = load_checkpoint(out)
        assert bundle.kind == "tse"
        assert "weak_loss_before" in bundle.extra

    def test_vocabulary_mismatch_exits_4(self, cli_space, tmp_path, capsys):
        clf = load_checkpoint(cli_space["clf"])
        other = tmp_path / "other_clf.pt"
        renamed = Vocabulary([f"other{i}" for i in range(len(clf.vocabulary))])
        save_checkpoint(other, "sec", clf.config, renamed, clf.build(), 1, 0.0)
        paths = dataset_paths(cli_space["data"])
        code = main(["retrain-weak", "--checkpoint", str(cli_space["ckpt"]),
                     "--classifier", str(other), "--manifest", str(paths["train"]),
                     "--valid-manifest", str(paths["valid"]),
                     "--out", str(tmp_path / "w.pt"), "--epochs", "1"])
        assert code == 4
        assert "vocabularies differ" in capsys.readouterr().err


class TestAdapt:
    def test_adds_class_from_enrollments(self, cli_space, tiny_dataset, tmp_path, capsys):
        clips = sorted((tiny_dataset["root"] / "enroll").glob("*/*.wav"))[:2]
        out = tmp_path / "adapted.pt"
        code = main(["--quiet", "adapt", "--checkpoint", str(cli_space["mixed"]),
                     "--data", str(cli_space["data"]), "--out", str(out),
                     "--new-class", f"extra={clips[0]},{clips[1]}",
                     "--size", "4", "--valid-size", "2",
                     "--set", "adapt.epochs=1"])
        assert code == 0
        assert "valid" in capsys.readouterr().out
        bundle = load_checkpoint(out)
        assert bundle.kind == "tse"
        assert bundle.vocabulary.names[-1] == "extra"
        assert len(bundle.vocabulary) == len(tiny_dataset["vocabulary"]) + 1
        assert bundle.extra["num_frozen"] == len(tiny_dataset["vocabulary"])
        assert bundle.config.model.num_classes == len(bundle.vocabulary)
        model = bundle.build()
        assert model.label_encoder.matrix.shape[1] == len(bundle.vocabulary)

    def test_rejects_model_without_enroll_encoder(self, cli_space, tiny_dataset,
                                                  tmp_path, capsys):
        clip = sorted((tiny_dataset["root"] / "enroll").glob("*/*.wav"))[0]
        code = main(["adapt", "--checkpoint", str(cli_space["ckpt"]),
                     "--data", str(cli_space["data"]), "--out", str(tmp_path / "a.pt"),
                     "--new-class", f"extra={clip}", "--size", "2", "--valid-size", "1"])
        assert code == 2
        assert "enrollment encoder" in capsys.readouterr().err
