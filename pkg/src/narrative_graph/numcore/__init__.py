"""Minimal reverse-mode autodiff over dense float64 tensors."""

from .gradcheck import grad_check
from .optim import Adam, AdamState, adam_step
from .recurrent import bilstm_fused, lstm
from .selection import (
    KL_FLOOR,
    SelectionTrace,
    gumbel_softmax_st,
    kl_divergence,
    record_selections,
    replay_selections,
    softmax_temp,
    straight_through_topk,
    topk_mask,
)
from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    div,
    dot,
    dropout,
    exp,
    gaussian_parameter,
    layer_norm,
    log,
    matmul,
    mean_of,
    mul,
    relu,
    reshape,
    sigmoid,
    stack,
    sub,
    take,
    tanh,
    transpose,
    tsum,
    uniform_parameter,
    zeros_parameter,
)

__all__ = [
    "Adam", "AdamState", "KL_FLOOR", "SelectionTrace", "Tensor", "adam_step", "add", "as_tensor",
    "concat", "div", "dot", "dropout", "exp", "gaussian_parameter", "grad_check", "gumbel_softmax_st",
    "kl_divergence", "layer_norm", "log", "lstm", "bilstm_fused", "matmul", "mean_of", "mul", "record_selections",
    "relu", "replay_selections", "reshape", "sigmoid", "softmax_temp", "stack", "straight_through_topk",
    "sub", "take", "tanh", "topk_mask", "transpose", "tsum", "uniform_parameter", "zeros_parameter",
]
