"""Shared fixtures: a tiny simulated dataset and small model configs.

The dataset is built once per session; tests that mutate nothing share it.
Everything is sized for seconds-scale CPU runs.
"""

from pathlib import Path

import pytest

from tsekit.config import ModelConfig, SimulateConfig
from tsekit.data import dataset_paths
from tsekit.simulate import default_class_names, materialize_dataset
from tsekit.types import Vocabulary, load_manifest


def small_model_config(num_classes: int, clue_mode: str = "class") -> ModelConfig:
    """Smaller than the toy preset; sized for unit-test smokes."""
    return ModelConfig(
        num_classes=num_classes,
        clue_mode=clue_mode,
        win_length=16,
        hop_length=8,
        feature_dim=16,
        bottleneck_dim=16,
        hidden_dim=24,
        kernel_size=3,
        blocks_per_stack=2,
        mixture_stacks=1,
        mask_stacks=1,
        enroll_blocks=2,
    )


TINY_SIM = SimulateConfig(
    classes=tuple(default_class_names(4)),
    splits={"train": 12, "valid": 6, "test": 6},
    duration_s=0.5,
    events_min=2,
    events_max=2,
    inactive_fraction=0.25,
    event_duration_s=(0.2, 0.4),
    pool_size=4,
    seed=5,
)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Materialized 4-class dataset: paths, manifests, and vocabulary."""
    root = tmp_path_factory.mktemp("tiny_data")
    materialize_dataset(TINY_SIM, root)
    paths = dataset_paths(root)
    vocabulary = Vocabulary.load(paths["vocab"])
    manifests = {
        split: load_manifest(paths[split], num_classes=len(vocabulary))
        for split in ("train", "valid", "test")
    }
    return {
        "root": Path(root),
        "config": TINY_SIM,
        "vocabulary": vocabulary,
        "manifests": manifests,
    }


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance scorecard so it survives output capture."""
    import acceptance_support

    if acceptance_support.SCORECARD:
        terminalreporter.write_sep("-", "acceptance scorecard")
        for line in acceptance_support.SCORECARD:
            terminalreporter.write_line(line)
