"""Minimal dense-tensor engine with reverse-mode differentiation."""

from .gradcheck import GradCheckReport, grad_check
from .optim import Adam, Sgd
from .ops import (
    affine_sample,
    attention,
    conv2d,
    l2_normalize_rows,
    layer_norm,
    linear,
    maxpool2x2,
    sample_bilinear,
    take_pixels,
    upsample_bilinear2x,
)
from .params import ParameterStore, init_array, seed_for
from .tensor import Tensor, concat, grad_enabled, logsumexp, no_grad, softmax

__all__ = [
    "Adam",
    "GradCheckReport",
    "ParameterStore",
    "Sgd",
    "Tensor",
    "affine_sample",
    "attention",
    "concat",
    "conv2d",
    "grad_check",
    "grad_enabled",
    "init_array",
    "l2_normalize_rows",
    "layer_norm",
    "linear",
    "logsumexp",
    "maxpool2x2",
    "no_grad",
    "sample_bilinear",
    "seed_for",
    "softmax",
    "take_pixels",
    "upsample_bilinear2x",
]
