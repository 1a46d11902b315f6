"""Flat parameter vectors over a list of arrays."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ShapeError
from .core import Tensor


class ParamVector:
    """A 1-d float64 vector together with the shapes it unflattens into.

    Supports the vector-space arithmetic the trainers need
    (``+``, ``-``, scalar ``*``, :meth:`dot`, :meth:`norm`).
    """

    __slots__ = ("flat", "shapes")

    def __init__(self, flat, shapes: Sequence[tuple]):
        flat = np.asarray(flat, dtype=np.float64).ravel()
        shapes = [tuple(s) for s in shapes]
        total = sum(int(np.prod(s, dtype=np.int64)) for s in shapes)
        if flat.size != total:
            raise ShapeError("ParamVector", total, flat.size)
        self.flat = flat
        self.shapes = shapes

    @classmethod
    def from_arrays(cls, arrays: Sequence) -> "ParamVector":
        arrays = [np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64) for a in arrays]
        if not arrays:
            return cls(np.zeros(0), [])
        return cls(np.concatenate([a.ravel() for a in arrays]), [a.shape for a in arrays])

    @property
    def dim(self) -> int:
        return self.flat.size

    def unflatten(self) -> list:
        out, start = [], 0
        for s in self.shapes:
            n = int(np.prod(s, dtype=np.int64))
            out.append(self.flat[start:start + n].reshape(s).copy())
            start += n
        return out

    def tensors(self, requires_grad: bool = True) -> list:
        return [Tensor(a, requires_grad=requires_grad) for a in self.unflatten()]

    def like(self, flat) -> "ParamVector":
        return ParamVector(flat, self.shapes)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(np.zeros_like(self.flat), self.shapes)

    def _other(self, other) -> np.ndarray:
        if isinstance(other, ParamVector):
            if other.dim != self.dim:
                raise ShapeError("ParamVector", self.dim, other.dim)
            return other.flat
        return other

    def __add__(self, other) -> "ParamVector":
        return self.like(self.flat + self._other(other))

    def __sub__(self, other) -> "ParamVector":
        return self.like(self.flat - self._other(other))

    def __mul__(self, c: float) -> "ParamVector":
        return self.like(self.flat * float(c))

    __rmul__ = __mul__

    def __neg__(self) -> "ParamVector":
        return self.like(-self.flat)

    def dot(self, other: "ParamVector") -> float:
        return float(self.flat @ self._other(other))

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat))

    def copy(self) -> "ParamVector":
        return self.like(self.flat.copy())

    def __repr__(self) -> str:
        return f"ParamVector(dim={self.dim}, shapes={self.shapes})"


def flatten_tensors(tensors: Sequence[Tensor], shapes: Sequence[tuple] | None = None) -> ParamVector:
    pv = ParamVector.from_arrays(tensors)
    return pv if shapes is None else ParamVector(pv.flat, shapes)
