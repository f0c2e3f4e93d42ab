"""Differentially private training with Fourier-domain clipping, noise and filtering."""

from .accountant import PrivacyBudget, SgmParams, budget_for_run, rdp_sgm, sigma_for_target
from .data import Dataset, SyntheticSpec, load_mnist, make_blobs
from .mechanism import FilterSpec, NoiseParams, spectral_dp_1d, spectral_dp_2d
from .model import Model, ModelSpec
from .rng import NoiseStream
from .trainer import MetricsRecord, NumericFailure, TrainConfig, Trainer, TrainState, evaluate, train, train_dpsgd_baseline

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FilterSpec",
    "MetricsRecord",
    "Model",
    "ModelSpec",
    "NoiseParams",
    "NoiseStream",
    "NumericFailure",
    "PrivacyBudget",
    "SgmParams",
    "SyntheticSpec",
    "TrainConfig",
    "TrainState",
    "Trainer",
    "budget_for_run",
    "evaluate",
    "load_mnist",
    "make_blobs",
    "rdp_sgm",
    "sigma_for_target",
    "spectral_dp_1d",
    "spectral_dp_2d",
    "train",
    "train_dpsgd_baseline",
]
