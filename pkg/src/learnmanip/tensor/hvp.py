"""Finite-difference Hessian-vector products."""

from __future__ import annotations

from typing import Callable

from ..errors import ContractError, ShapeError
from .core import Tensor, grad
from .params import ParamVector

DEFAULT_DELTA = 1e-2

LossFn = Callable[[list], Tensor]


def value_and_grad(loss_fn: LossFn, params: ParamVector) -> tuple[float, ParamVector]:
    """Evaluate ``loss_fn`` on fresh leaves built from ``params`` and its gradient."""
    leaves = params.tensors(requires_grad=True)
    loss = loss_fn(leaves)
    grads = grad(loss, leaves)
    return loss.item(), ParamVector.from_arrays(grads)


def hvp_fd(loss_fn: LossFn, params: ParamVector, v: ParamVector, delta: float = DEFAULT_DELTA) -> ParamVector:
    """Central-difference approximation of H(params) @ v.

    The step is ``delta / max(||v||, 1e-12)`` so the probe points sit at a
    distance ``delta`` from ``params`` whatever the scale of ``v``.
    """
    if params.dim == 0:
        raise ContractError("hvp_fd on zero-dimensional parameters")
    if v.dim != params.dim:
        raise ShapeError("hvp_fd", params.dim, v.dim)
    if not delta > 0:
        raise ContractError(f"hvp_fd delta must be positive, got {delta}")
    vnorm = v.norm()
    if vnorm == 0.0:
        return params.zeros_like()
    eps = delta / max(vnorm, 1e-12)
    _, g_plus = value_and_grad(loss_fn, params + eps * v)
    _, g_minus = value_and_grad(loss_fn, params - eps * v)
    return (g_plus - g_minus) * (1.0 / (2.0 * eps))
