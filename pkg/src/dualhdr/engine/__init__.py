"""Minimal reverse-mode differentiable array engine (numpy backed)."""

from .core import NonFiniteError, Tensor, as_tensor, backward, default_dtype, no_grad, precision
from .gradcheck import check_gradients, check_parameters, relative_error
from .ops import (
    abs_,
    add,
    add_scalar,
    bilinear_upsample,
    clip,
    concat,
    conv2d,
    fold,
    fold_unnormalized,
    fully_connected,
    global_avg_pool,
    haar_dwt,
    haar_dwt_packed,
    haar_iwt,
    haar_iwt_packed,
    log,
    matmul,
    mean,
    mul,
    pixel_shuffle_up,
    relu,
    reshape,
    scale,
    sigmoid,
    slice_,
    softmax,
    sub,
    sum_,
    transpose,
    unfold,
)
from .params import ParamStore, adam_step, load_into, read_checkpoint, save_checkpoint

__all__ = [name for name in dir() if not name.startswith("_")]
