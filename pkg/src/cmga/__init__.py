"""Cross-modality gated-attention fusion for multimodal sentiment regression."""

from .ablation import AblationResult, AblationVariant, apply_variant, run_matrix
from .autodiff import Tape, Tensor, backward, finite_diff_gradient
from .data import Dataset, SyntheticSpec, generate_synthetic, load_dataset, save_dataset, split_dataset
from .estimator import CmgaRegressor
from .metrics import EvalResult, evaluate_all
from .model import (
    CmgaModel,
    Modality,
    ModelConfig,
    PairSpec,
    forward,
    init_parameters,
    load_checkpoint,
    save_checkpoint,
)
from .training import Adam, TrainReport, gradient_check_model, train

__version__ = "0.1.0"

__all__ = [
    "AblationResult",
    "AblationVariant",
    "Adam",
    "CmgaModel",
    "CmgaRegressor",
    "Dataset",
    "EvalResult",
    "Modality",
    "ModelConfig",
    "PairSpec",
    "SyntheticSpec",
    "Tape",
    "Tensor",
    "TrainReport",
    "apply_variant",
    "backward",
    "evaluate_all",
    "finite_diff_gradient",
    "forward",
    "generate_synthetic",
    "gradient_check_model",
    "init_parameters",
    "load_checkpoint",
    "load_dataset",
    "run_matrix",
    "save_checkpoint",
    "save_dataset",
    "split_dataset",
    "train",
]
