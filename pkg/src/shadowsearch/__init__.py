"""Gradient-based optimization of parametric robot search strategies.

A differentiable surrogate ("shadow model") of a spiral or probe search is
pretrained on simulated stochastic environments, finetuned on a ring buffer
of recent executions, and inverted by gradient descent to produce parameters
that trade off failure probability against cycle time, tracking nonstationary
hole-pose distributions over time.
"""

__version__ = "0.1.0"

from .envproc import GaussianMixture2D, HolePose, HoleProcess, MixtureSpec, sample_mixture
from .errors import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    InsufficientDataError,
    IntegrityError,
    NumericError,
    ShadowSearchError,
)
from .inversion import InversionConfig, InversionResult, Objective, Regularizer, invert
from .shadow import OutcomeStats, ShadowModel, derived_cycle, derived_fail, predict, training_loss
from .sim import (
    ExecutionRecord,
    ProbeParams,
    SearchRegion,
    SpiralParams,
    StrategyKind,
    TaskDataset,
    TimingConfig,
    collect_task_dataset,
    simulate_probe,
    simulate_spiral,
    success_prob_oracle,
)
from .trainers import RingBuffer, SourceDataset, TrainConfig, finetune, pretrain

__all__ = [
    "ConfigError",
    "ContractError",
    "DegenerateInputError",
    "ExecutionRecord",
    "GaussianMixture2D",
    "HolePose",
    "HoleProcess",
    "InsufficientDataError",
    "IntegrityError",
    "InversionConfig",
    "InversionResult",
    "MixtureSpec",
    "NumericError",
    "Objective",
    "OutcomeStats",
    "ProbeParams",
    "Regularizer",
    "RingBuffer",
    "SearchRegion",
    "ShadowModel",
    "ShadowSearchError",
    "SourceDataset",
    "SpiralParams",
    "StrategyKind",
    "TaskDataset",
    "TimingConfig",
    "TrainConfig",
    "collect_task_dataset",
    "derived_cycle",
    "derived_fail",
    "finetune",
    "invert",
    "predict",
    "pretrain",
    "sample_mixture",
    "simulate_probe",
    "simulate_spiral",
    "success_prob_oracle",
    "training_loss",
]
