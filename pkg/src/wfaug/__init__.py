"""Few-shot website-fingerprinting experiments on Tor direction traces.

Pieces: trace I/O and synthetic data (traces), deterministic seeding
(seeding), harmonious augmentation operators (augment), a discrete TPE
hyperparameter optimizer (tpe), a from-scratch 1D CNN with training loop
(nn), evaluation and experiment running (evaluate), and the manifest-driven
command line (manifest, cli).
"""

from .augment import (AugConfig, BACKWARD, FORWARD, MASKING, MIXING,
                      MaskParams, MixParams, OPERATORS, ROTATION,
                      RotationParams, hda_batch, mask, mix, rotate,
                      sample_lambda, sample_mask, sample_rotation)
from .evaluate import (ConfusionSummary, ExperimentConfig, OperatingPoint,
                       RunReport, THRESHOLD_GRID, TuneSpec, aggregate_metrics,
                       closed_accuracy, config_digest,
                       confusion_from_predictions, fit_spaces_to_length,
                       open_world_eval, report_json, report_table,
                       run_experiment, sweep_operating_points,
                       tune_augmentation, write_report)
from .manifest import KNOWN_KEYS, Manifest, ManifestError
from .nn import (Adam, CheckpointError, Conv1D, ConvBlock, Dense,
                 GlobalAvgPool, HistoryRow, MaxPool2, Model, ModelConfig,
                 ReLU, SgdMomentum, TrainConfig, TrainingDiverged,
                 cross_entropy, dataset_accuracy, decide,
                 default_model_config, load_checkpoint, make_optimizer,
                 predict, save_checkpoint, softmax, train, write_history)
from .seeding import derive_rng, spawn_seeds
from .tpe import (ObjectiveError, SearchSpace, StageTrial, TpeTrial,
                  default_budget, default_spaces, optimize_independent,
                  optimize_one, optimize_sequential, tpe_suggest,
                  write_trial_log)
from .traces import (BACKGROUND, Dataset, SplitSpec, TraceFormatError,
                     load_dataset, make_splits, one_hot_labels, save_dataset,
                     synth_dataset, synth_templates)

__version__ = "0.1.0"

__all__ = [
    "AugConfig", "BACKGROUND", "BACKWARD", "CheckpointError",
    "ConfusionSummary", "Conv1D", "ConvBlock", "Dataset", "Dense",
    "ExperimentConfig", "FORWARD", "GlobalAvgPool", "HistoryRow",
    "KNOWN_KEYS", "MASKING", "MIXING", "Manifest", "ManifestError",
    "MaskParams", "MaxPool2", "MixParams", "Model", "ModelConfig",
    "OPERATORS", "ObjectiveError", "OperatingPoint", "ROTATION", "ReLU",
    "RotationParams", "RunReport", "SearchSpace", "SgdMomentum", "SplitSpec",
    "StageTrial", "THRESHOLD_GRID", "TpeTrial", "TraceFormatError",
    "TrainConfig", "TrainingDiverged", "TuneSpec", "Adam",
    "aggregate_metrics", "closed_accuracy", "config_digest",
    "confusion_from_predictions", "cross_entropy", "dataset_accuracy",
    "decide", "default_budget", "default_model_config", "default_spaces",
    "derive_rng", "fit_spaces_to_length", "hda_batch", "load_checkpoint",
    "load_dataset", "make_optimizer", "make_splits", "mask", "mix",
    "one_hot_labels", "open_world_eval", "optimize_independent",
    "optimize_one", "optimize_sequential", "predict", "report_json",
    "report_table", "rotate", "run_experiment", "sample_lambda",
    "sample_mask", "sample_rotation", "save_checkpoint", "save_dataset",
    "softmax", "spawn_seeds", "sweep_operating_points", "synth_dataset",
    "synth_templates", "tpe_suggest", "train", "tune_augmentation",
    "write_history", "write_report", "write_trial_log",
]
