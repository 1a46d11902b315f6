"""Reverse-mode differentiation substrate."""

from .core import (
    PRIMITIVES,
    Primitive,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    clip,
    div,
    dot,
    enable_grad,
    evaluate_graph,
    exp,
    fill,
    grad,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    pick,
    place,
    relu,
    reshape,
    rowsum_expand,
    scatter_rows,
    softmax,
    sub,
    sum_rows,
    take_rows,
    tanh,
    tile_rows,
    transpose,
    tsum,
)
from .hvp import DEFAULT_DELTA, hvp_fd, value_and_grad
from .params import ParamVector, flatten_tensors

