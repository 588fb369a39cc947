"""Target sound extraction toolkit.

Extracts the audio of user-chosen sound-event classes from mixtures. The
model is a ConvTasNet-style masking network conditioned on a clue
embedding, which comes from a learned class-embedding matrix, from
enrollment recordings, or from both. Ships with a scene simulator, a
permutation-invariant separation baseline, a small sound-event
classifier, few-shot adaptation to unseen classes, and evaluation tools.
"""

from __future__ import annotations

from .adaptation import (
    average_embedding,
    extend_matrix,
    extend_model,
    finetune_new_embeddings,
    generate_adaptation_set,
)
from .audio_io import read_wav, write_wav
from .checkpoint import ModelBundle, load_checkpoint, save_checkpoint
from .classifier import SoundEventClassifier, select_output, train_classifier
from .clues import (
    EnrollmentEncoder,
    LabelEncoder,
    class_embedding,
    enroll_embedding,
    mixed_clue_embedding,
    multi_enroll_embedding,
)
from .codec import Codec, apply_mask, frame_count
from .config import (
    AdaptConfig,
    LossConfig,
    ModelConfig,
    RunConfig,
    SimulateConfig,
    TrainConfig,
    load_run_config,
    load_simulate_config,
    toy_model_config,
)
from .errors import (
    AudioFormatError,
    ConfigError,
    DivergenceError,
    ManifestError,
    TsekitError,
    VocabularyError,
)
from .evaluate import EvalReport, run_eval
from .extractor import TargetSoundModel
from .losses import (
    combined_loss,
    inactive_loss,
    pit_loss,
    sec_weak_loss,
    soundbeam_loss,
    thresholded_sdr_loss,
)
from .metrics import (
    attenuation_mix,
    attenuation_src,
    inactive_detection_auc,
    mean_average_precision,
    sdr_improvement,
    si_sdr,
)
from .separator import SoundSeparator, oracle_select
from .simulate import (
    ToyClassBank,
    default_class_names,
    materialize_dataset,
    sample_enrollment,
    sample_scene_spec,
    synthesize_mixture,
)
from .train import retrain_weak, train_extractor, train_separator
from .types import (
    SAMPLE_RATE,
    EnrollmentSet,
    LabelSet,
    Manifest,
    ManifestRecord,
    MixtureExample,
    TargetSpec,
    Vocabulary,
    Waveform,
    load_manifest,
    seeded_rng,
    write_manifest,
)

__version__ = "0.1.0"

__all__ = [
    "SAMPLE_RATE",
    "AdaptConfig",
    "AudioFormatError",
    "Codec",
    "ConfigError",
    "DivergenceError",
    "EnrollmentEncoder",
    "EnrollmentSet",
    "EvalReport",
    "LabelEncoder",
    "LabelSet",
    "LossConfig",
    "Manifest",
    "ManifestError",
    "ManifestRecord",
    "MixtureExample",
    "ModelBundle",
    "ModelConfig",
    "RunConfig",
    "SimulateConfig",
    "SoundEventClassifier",
    "SoundSeparator",
    "TargetSoundModel",
    "TargetSpec",
    "ToyClassBank",
    "TrainConfig",
    "TsekitError",
    "Vocabulary",
    "VocabularyError",
    "Waveform",
    "apply_mask",
    "attenuation_mix",
    "attenuation_src",
    "average_embedding",
    "class_embedding",
    "combined_loss",
    "default_class_names",
    "enroll_embedding",
    "extend_matrix",
    "extend_model",
    "finetune_new_embeddings",
    "frame_count",
    "generate_adaptation_set",
    "inactive_detection_auc",
    "inactive_loss",
    "load_checkpoint",
    "load_manifest",
    "load_run_config",
    "load_simulate_config",
    "materialize_dataset",
    "mean_average_precision",
    "mixed_clue_embedding",
    "multi_enroll_embedding",
    "oracle_select",
    "pit_loss",
    "read_wav",
    "retrain_weak",
    "run_eval",
    "sample_enrollment",
    "sample_scene_spec",
    "save_checkpoint",
    "sdr_improvement",
    "sec_weak_loss",
    "seeded_rng",
    "select_output",
    "si_sdr",
    "soundbeam_loss",
    "synthesize_mixture",
    "thresholded_sdr_loss",
    "toy_model_config",
    "train_classifier",
    "train_extractor",
    "train_separator",
    "write_manifest",
    "write_wav",
]
