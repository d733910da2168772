"""Dense-tensor math substrate: autodiff, GRU, batch norm, losses, NAdam."""

from vground.numerics.checkpoint import load_checkpoint, save_checkpoint
from vground.numerics.gradcheck import GradCheckReport, finite_diff_check
from vground.numerics.nn import batch_norm, gru_cell_forward, masked_batch_norm
from vground.numerics.optim import nadam_step
from vground.numerics.params import (BatchNormState, GruParams, Parameter,
                                     ParamStore, glorot_uniform)
from vground.numerics.tensor import (Tensor, absolute, default_dtype, matmul,
                                     set_default_dtype, sigmoid, sigmoid_bce,
                                     softmax, softmax_cross_entropy,
                                     softmax_cross_entropy_parts, sqrt, take_rows,
                                     tanh, tmean, tsum, using_dtype)

__all__ = [
    "Tensor", "Parameter", "ParamStore", "GruParams", "BatchNormState",
    "GradCheckReport", "gru_cell_forward", "batch_norm", "masked_batch_norm",
    "softmax", "softmax_cross_entropy", "softmax_cross_entropy_parts",
    "sigmoid", "sigmoid_bce", "tanh", "sqrt", "absolute", "matmul", "tsum",
    "tmean", "take_rows", "nadam_step", "finite_diff_check", "glorot_uniform",
    "save_checkpoint", "load_checkpoint", "default_dtype", "set_default_dtype",
    "using_dtype",
]
