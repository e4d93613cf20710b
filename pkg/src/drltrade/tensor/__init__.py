"""Minimal float64 tensor engine with reverse-mode gradients."""

from .checkpoint import load_checkpoint, save_checkpoint
from .distributions import gaussian_entropy, gaussian_log_prob, gaussian_log_prob_np, gaussian_sample
from .ops import (
    RunningStats,
    batchnorm,
    batchnorm_backward,
    batchnorm_forward,
    column_normalize,
    column_normalize_backward,
    column_normalize_forward,
    conv2d,
    conv2d_backward,
    conv2d_forward,
    conv_output_size,
    dense,
    dense_backward,
    dense_forward,
    dropout,
    dropout_mask,
    maxpool2d,
    maxpool2d_backward,
    maxpool2d_forward,
    relu,
    relu_backward,
    relu_forward,
)
from .optim import AdamState, adam_step, clip_grad_norm, global_norm, sgd_step
from .rng import Rng
from .tensor import Tensor, as_tensor, minimum, no_grad

__all__ = [
    "AdamState",
    "Rng",
    "RunningStats",
    "Tensor",
    "adam_step",
    "as_tensor",
    "batchnorm",
    "batchnorm_backward",
    "batchnorm_forward",
    "clip_grad_norm",
    "column_normalize",
    "column_normalize_backward",
    "column_normalize_forward",
    "conv2d",
    "conv2d_backward",
    "conv2d_forward",
    "conv_output_size",
    "dense",
    "dense_backward",
    "dense_forward",
    "dropout",
    "dropout_mask",
    "gaussian_entropy",
    "gaussian_log_prob",
    "gaussian_log_prob_np",
    "gaussian_sample",
    "global_norm",
    "load_checkpoint",
    "maxpool2d",
    "maxpool2d_backward",
    "maxpool2d_forward",
    "minimum",
    "no_grad",
    "relu",
    "relu_backward",
    "relu_forward",
    "save_checkpoint",
    "sgd_step",
]
