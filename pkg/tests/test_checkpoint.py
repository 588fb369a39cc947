"""Checkpoint container: round trips for every model kind and rebuild fidelity."""

import numpy as np
import pytest
import torch

from conftest import small_model_config
from tsekit.checkpoint import ModelBundle, load_checkpoint, save_checkpoint
from tsekit.classifier import SoundEventClassifier
from tsekit.config import RunConfig
from tsekit.errors import ConfigError
from tsekit.extractor import TargetSoundModel
from tsekit.separator import SoundSeparator
from tsekit.types import Vocabulary


def _run_config(clue_mode="class"):
    return RunConfig(model=small_model_config(3, clue_mode))


def _vocab():
    return Vocabulary(["tone_250", "chirp_480", "am_710"])


class TestRoundTrip:
    def test_extractor_round_trip_is_bitwise(self, tmp_path):
        torch.manual_seed(0)
        cfg = _run_config()
        model = TargetSoundModel(cfg.model)
        path = save_checkpoint(tmp_path / "m.pt", "tse", cfg, _vocab(), model,
                               epoch=3, valid_loss=1.25, extra={"note": 7})
        bundle = load_checkpoint(path)
        assert bundle.kind == "tse"
        assert bundle.epoch == 3
        assert bundle.valid_loss == 1.25
        assert bundle.extra == {"note": 7}
        assert bundle.vocabulary == _vocab()
        assert bundle.config == cfg
        rebuilt = bundle.build()
        assert not rebuilt.training
        for name, tensor in model.state_dict().items():
            assert torch.equal(tensor, rebuilt.state_dict()[name])
        x = torch.randn(1, 100)
        e = torch.randn(1, 16)
        with torch.no_grad():
            assert torch.equal(model.eval().extract_batch(x, e), rebuilt.extract_batch(x, e))

    def test_separator_round_trip_restores_output_count(self, tmp_path):
        torch.manual_seed(0)
        cfg = _run_config()
        model = SoundSeparator(cfg.model, output_count=4)
        path = save_checkpoint(tmp_path / "s.pt", "uss", cfg, _vocab(), model,
                               epoch=1, valid_loss=0.5, extra={"output_count": 4})
        rebuilt = load_checkpoint(path).build()
        assert rebuilt.output_count == 4
        with torch.no_grad():
            out = rebuilt.separate_batch(torch.randn(1, 80))
        assert out.shape == (1, 4, 80)

    def test_classifier_round_trip_restores_channels(self, tmp_path):
        torch.manual_seed(0)
        cfg = _run_config()
        model = SoundEventClassifier(3, channels=8)
        path = save_checkpoint(tmp_path / "c.pt", "sec", cfg, _vocab(), model,
                               epoch=2, valid_loss=0.1, extra={"channels": 8})
        rebuilt = load_checkpoint(path).build()
        wav_in = torch.from_numpy(0.1 * np.random.default_rng(0).standard_normal(512)).float()
        with torch.no_grad():
            assert torch.equal(model.eval().posteriors(wav_in.unsqueeze(0)),
                               rebuilt.posteriors(wav_in.unsqueeze(0)))


class TestValidation:
    def test_unknown_kind_rejected_on_save(self, tmp_path):
        with pytest.raises(ConfigError, match="kind"):
            save_checkpoint(tmp_path / "x.pt", "gan", _run_config(), _vocab(),
                            TargetSoundModel(small_model_config(3)), 1, 0.0)

    def test_unknown_kind_rejected_on_build(self):
        bundle = ModelBundle(kind="gan", config=_run_config(), vocabulary=_vocab(),
                             state_dict={}, epoch=0, valid_loss=0.0)
        with pytest.raises(ConfigError, match="unknown checkpoint kind"):
            bundle.build()

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_checkpoint(tmp_path / "absent.pt")

    def test_malformed_payload_rejected(self, tmp_path):
        path = tmp_path / "bad.pt"
        torch.save({"kind": "tse"}, path)
        with pytest.raises(ConfigError, match="malformed checkpoint"):
            load_checkpoint(path)
