"""Sequence-model bias predictors on a small numpy autodiff engine."""

from .artifact import ModelArtifact
from .autodiff import Tensor, no_grad
from .gradcheck import check_variant, gradient_engine_check, tiny_config
from .models import AttentionBiasModel, ModelConfig, RecurrentBiasModel, build_model
from .train import InferenceSession, TrainConfig, TrainResult, predict, sequence_arrays, train, write_loss_curve

__all__ = [
    "AttentionBiasModel", "InferenceSession", "ModelArtifact", "ModelConfig", "RecurrentBiasModel",
    "Tensor", "TrainConfig", "TrainResult", "build_model", "check_variant", "gradient_engine_check",
    "no_grad", "predict", "sequence_arrays", "tiny_config", "train", "write_loss_curve",
]
