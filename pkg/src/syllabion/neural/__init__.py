"""Numpy transformer encoder, projection heads, autodiff, and optimizer."""

from .autodiff import Tensor, concat, gelu, gelu_t, softmax
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    EncoderConfig,
    MlpHeadConfig,
    NeuralError,
    Param,
    ParamStore,
    build_encoder_params,
    build_head_params,
    count_parameters,
    encoder_apply,
    encoder_forward,
    head_apply,
    layer_norm_t,
    mlp_head_forward,
    sinusoidal_positions,
)
from .optim import AdamWState, LrSchedule, NonFiniteGradientError, adamw_step

__all__ = [
    "AdamWState",
    "EncoderConfig",
    "LrSchedule",
    "MlpHeadConfig",
    "NeuralError",
    "NonFiniteGradientError",
    "Param",
    "ParamStore",
    "Tensor",
    "adamw_step",
    "build_encoder_params",
    "build_head_params",
    "concat",
    "count_parameters",
    "encoder_apply",
    "encoder_forward",
    "gelu",
    "gelu_t",
    "head_apply",
    "layer_norm_t",
    "load_checkpoint",
    "mlp_head_forward",
    "save_checkpoint",
    "sinusoidal_positions",
    "softmax",
]
