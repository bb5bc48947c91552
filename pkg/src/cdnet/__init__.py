"""Joint imputation-and-prediction for multivariate clinical time series.

A recurrent latent model feeds mixture density heads that impute missing
values with explicit variances; a variance-aware attention layer regularizes
the imputations; a second mixture head predicts the class-probability
distribution, exposing both aleatoric and epistemic uncertainty.
"""

from .data import (
    Dataset,
    Journey,
    SynthConfig,
    load_csv,
    missingness_stats,
    normalize,
    split,
    synth_generate,
)
from .numerics import GradientTape, Tensor, finite_diff_check
from .training import (
    ModelCheckpoint,
    TrainConfig,
    build_variant,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    train,
)
from .evaluation import MetricsReport, auprc, auroc

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Journey",
    "SynthConfig",
    "load_csv",
    "missingness_stats",
    "normalize",
    "split",
    "synth_generate",
    "GradientTape",
    "Tensor",
    "finite_diff_check",
    "ModelCheckpoint",
    "TrainConfig",
    "build_variant",
    "load_checkpoint",
    "model_from_checkpoint",
    "save_checkpoint",
    "train",
    "MetricsReport",
    "auprc",
    "auroc",
    "__version__",
]
