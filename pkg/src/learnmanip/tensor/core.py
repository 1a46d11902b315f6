"""Dense float64 tensors with a reverse-mode differentiation record.

Every primitive's vector-Jacobian product is written in terms of other
primitives, so gradients can themselves be differentiated when
``grad(..., create_graph=True)`` is used.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from ..errors import CapabilityError, ContractError, NumericOverflowError, ShapeError

_local = threading.local()


def _grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


def _tape_stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


@contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    prev = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


@contextmanager
def enable_grad():
    prev = _grad_enabled()
    _local.grad_enabled = True
    try:
        yield
    finally:
        _local.grad_enabled = prev


class Tensor:
    """Immutable float64 array, optionally a node of the differentiation graph."""

    __slots__ = ("data", "requires_grad", "name", "_prim", "_inputs", "_attrs")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericOverflowError("tensor: non-finite value in constructor input")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._prim = None
        self._inputs = ()
        self._attrs = {}

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        arr.setflags(write=False)
        t.data = arr
        t.requires_grad = False
        t.name = None
        t._prim = None
        t._inputs = ()
        t._attrs = {}
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._prim is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self):
        return transpose(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericOverflowError(f"{name}: non-finite intermediate value")


class Primitive:
    """A differentiable operation.

    ``forward(*arrays, **attrs)`` computes the value; ``vjp(g, out, *inputs,
    **attrs)`` returns one Tensor (or None) per input. ``second_order`` marks
    whether the vjp is itself built from recorded primitives.
    """

    def __init__(self, name: str, forward: Callable, vjp: Callable, second_order: bool = True):
        self.name = name
        self.forward = forward
        self.vjp = vjp
        self.second_order = second_order

    def __call__(self, *inputs, **attrs) -> Tensor:
        tensors = tuple(as_tensor(x) for x in inputs)
        with np.errstate(all="ignore"):
            out_arr = np.asarray(self.forward(*(t.data for t in tensors), **attrs), dtype=np.float64)
        _check_finite(self.name, out_arr)
        out = Tensor._wrap(out_arr)
        if _grad_enabled() and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            out._prim = self
            out._inputs = tensors
            out._attrs = attrs
        for tape in _tape_stack():
            tape._record(out, self, tensors, attrs)
        return out

    def __repr__(self) -> str:
        return f"Primitive({self.name})"


# ---------------------------------------------------------------- shape rules


def _broadcast_shape(name: str, a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    if a == ():
        return b
    if b == ():
        return a
    # row vector over matrix: (m,) or (1, m) against (n, m)
    for row, mat in ((a, b), (b, a)):
        if len(mat) == 2 and (row == (mat[1],) or row == (1, mat[1])):
            return mat
    raise ShapeError(name, a, b)


def _unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    if g.shape == shape:
        return g
    if shape == ():
        return tsum(g)
    if len(shape) == 1:
        return sum_rows(g)
    return reshape(sum_rows(g), shape=shape)


def _binary(name, fn):
    def forward(a, b):
        _broadcast_shape(name, a.shape, b.shape)
        return fn(a, b)

    return forward


# ----------------------------------------------------------------- primitives


add = Primitive(
    "add",
    _binary("add", np.add),
    lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
)

sub = Primitive(
    "sub",
    _binary("sub", np.subtract),
    lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)),
)

mul = Primitive(
    "mul",
    _binary("mul", np.multiply),
    lambda g, out, a, b: (_unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)),
)

div = Primitive(
    "div",
    _binary("div", np.divide),
    lambda g, out, a, b: (
        _unbroadcast(div(g, b), a.shape),
        _unbroadcast(neg(div(mul(g, out), b)), b.shape),
    ),
)

neg = Primitive("neg", np.negative, lambda g, out, a: (neg(g),))


def _matmul_fwd(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        expected = "(n, k) @ (k, m)"
        raise ShapeError("matmul", expected, f"{a.shape} @ {b.shape}")
    return a @ b


matmul = Primitive(
    "matmul",
    _matmul_fwd,
    lambda g, out, a, b: (matmul(g, transpose(b)), matmul(transpose(a), g)),
)


def _transpose_fwd(a):
    if a.ndim != 2:
        raise ShapeError("transpose", "2-d", a.shape)
    return a.T.copy()


transpose = Primitive("transpose", _transpose_fwd, lambda g, out, a: (transpose(g),))


def _reshape_fwd(a, shape):
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError("reshape", f"{a.size} elements", shape)
    return a.reshape(shape).copy()


reshape = Primitive("reshape", _reshape_fwd, lambda g, out, a, shape: (reshape(g, shape=a.shape),))

exp = Primitive("exp", np.exp, lambda g, out, a: (mul(g, out),))
log = Primitive("log", np.log, lambda g, out, a: (div(g, a),))
tanh = Primitive("tanh", np.tanh, lambda g, out, a: (mul(g, sub(1.0, mul(out, out))),))
relu = Primitive(
    "relu",
    lambda a: np.maximum(a, 0.0),
    lambda g, out, a: (mul(g, Tensor._wrap((a.data > 0).astype(np.float64))),),
)


def _clip_vjp(g, out, a, lo, hi):
    mask = ((a.data > lo) & (a.data < hi)).astype(np.float64)
    return (mul(g, Tensor._wrap(mask)),)


clip = Primitive("clip", lambda a, lo, hi: np.clip(a, lo, hi), _clip_vjp)


def _softmax_fwd(a):
    if a.ndim not in (1, 2):
        raise ShapeError("softmax", "1-d or 2-d", a.shape)
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax_fwd(a):
    if a.ndim not in (1, 2):
        raise ShapeError("log_softmax", "1-d or 2-d", a.shape)
    z = a - a.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _rowsum_expand_fwd(a):
    if a.ndim not in (1, 2):
        raise ShapeError("rowsum_expand", "1-d or 2-d", a.shape)
    return np.broadcast_to(a.sum(axis=-1, keepdims=True), a.shape).copy()


# out[i, j] = sum_k a[i, k]; the map is self-adjoint.
rowsum_expand = Primitive("rowsum_expand", _rowsum_expand_fwd, lambda g, out, a: (rowsum_expand(g),))

softmax = Primitive(
    "softmax",
    _softmax_fwd,
    lambda g, out, a: (mul(out, sub(g, rowsum_expand(mul(g, out)))),),
)

log_softmax = Primitive(
    "log_softmax",
    _log_softmax_fwd,
    lambda g, out, a: (sub(g, mul(exp(out), rowsum_expand(g))),),
)

tsum = Primitive("sum", lambda a: np.asarray(a.sum()), lambda g, out, a: (fill(g, shape=a.shape),))


def _fill_fwd(a, shape):
    if a.shape != ():
        raise ShapeError("fill", (), a.shape)
    return np.full(tuple(shape), float(a))


fill = Primitive("fill", _fill_fwd, lambda g, out, a, shape: (tsum(g),))


def _sum_rows_fwd(a):
    if a.ndim != 2:
        raise ShapeError("sum_rows", "2-d", a.shape)
    return a.sum(axis=0)


def _tile_rows_fwd(a, n):
    if a.ndim != 1:
        raise ShapeError("tile_rows", "1-d", a.shape)
    return np.tile(a, (int(n), 1))


sum_rows = Primitive("sum_rows", _sum_rows_fwd, lambda g, out, a: (tile_rows(g, n=a.shape[0]),))
tile_rows = Primitive("tile_rows", _tile_rows_fwd, lambda g, out, a, n: (sum_rows(g),))


def _take_rows_fwd(a, index):
    if a.ndim not in (1, 2):
        raise ShapeError("take_rows", "1-d or 2-d", a.shape)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ShapeError("take_rows", f"indices in [0, {a.shape[0]})", f"[{index.min()}, {index.max()}]")
    return a[index]


def _scatter_rows_fwd(a, index, n):
    index = np.asarray(index, dtype=np.int64)
    if a.shape[0] != index.shape[0]:
        raise ShapeError("scatter_rows", f"{index.shape[0]} rows", a.shape)
    out = np.zeros((int(n),) + a.shape[1:])
    np.add.at(out, index, a)
    return out


take_rows = Primitive(
    "take_rows",
    _take_rows_fwd,
    lambda g, out, a, index: (scatter_rows(g, index=index, n=a.shape[0]),),
)
scatter_rows = Primitive(
    "scatter_rows",
    _scatter_rows_fwd,
    lambda g, out, a, index, n: (take_rows(g, index=index),),
)


def _pick_fwd(a, index):
    index = np.asarray(index, dtype=np.int64)
    if a.ndim != 2 or index.shape != (a.shape[0],):
        raise ShapeError("pick", f"(n, m) with {index.shape[0]} indices", a.shape)
    if index.size and (index.min() < 0 or index.max() >= a.shape[1]):
        raise ShapeError("pick", f"indices in [0, {a.shape[1]})", f"[{index.min()}, {index.max()}]")
    return a[np.arange(a.shape[0]), index]


def _place_fwd(a, index, m):
    index = np.asarray(index, dtype=np.int64)
    out = np.zeros((a.shape[0], int(m)))
    out[np.arange(a.shape[0]), index] = a
    return out


# pick: out[i] = a[i, index[i]]; place is its adjoint.
pick = Primitive("pick", _pick_fwd, lambda g, out, a, index: (place(g, index=index, m=a.shape[1]),))
place = Primitive("place", _place_fwd, lambda g, out, a, index, m: (pick(g, index=index),))

PRIMITIVES = {
    p.name: p
    for p in (
        add, sub, mul, div, neg, matmul, transpose, reshape, exp, log, tanh, relu, clip,
        softmax, log_softmax, rowsum_expand, tsum, fill, sum_rows, tile_rows, take_rows,
        scatter_rows, pick, place,
    )
}


def mean(a) -> Tensor:
    a = as_tensor(a)
    if a.size == 0:
        raise ContractError("mean of an empty tensor")
    return mul(tsum(a), 1.0 / a.size)


def dot(a, b) -> Tensor:
    return tsum(mul(a, b))


# ------------------------------------------------------------------- backward


def _topo_order(root: Tensor, create_graph: bool) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        if create_graph and node._prim is not None and not node._prim.second_order:
            raise CapabilityError(
                f"primitive '{node._prim.name}' has no second-order support; use the hvp_fd mode"
            )
        stack.append((node, True))
        for inp in node._inputs:
            if inp.requires_grad and id(inp) not in seen:
                stack.append((inp, False))
    return order


def grad(root: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> list:
    """Gradients of scalar ``root`` with respect to each tensor in ``wrt``.

    Inputs that ``root`` does not depend on get zero gradients. With
    ``create_graph`` the returned gradients are graph nodes themselves.
    """
    if root.size != 1:
        raise ContractError(f"backward requires a scalar root, got shape {root.shape}")
    wrt = list(wrt)
    want = {id(w) for w in wrt}
    found = {}
    if root.requires_grad:
        order = _topo_order(root, create_graph)
        grads = {id(root): Tensor._wrap(np.ones(root.shape))}
        ctx = enable_grad() if create_graph else no_grad()
        with ctx:
            for node in reversed(order):
                g = grads.pop(id(node), None)
                if g is None:
                    continue
                if id(node) in want:
                    found[id(node)] = g
                if node._prim is None:
                    continue
                parent_grads = node._prim.vjp(g, node, *node._inputs, **node._attrs)
                for inp, pg in zip(node._inputs, parent_grads):
                    if pg is None or not inp.requires_grad:
                        continue
                    prev = grads.get(id(inp))
                    grads[id(inp)] = pg if prev is None else add(prev, pg)
    out = []
    for w in wrt:
        g = found.get(id(w))
        out.append(g if g is not None else Tensor._wrap(np.zeros(w.shape)))
    return out


# ----------------------------------------------------------------------- tape


class Tape:
    """Ordered record of primitive applications made while the tape is active.

    >>> with Tape() as tape:
    ...     x = tape.watch(Tensor([1.0, 2.0]))
    ...     y = (x * x).sum()
    >>> evaluate_graph(tape, {x: [3.0, 4.0]}).item()
    25.0
    """

    def __init__(self):
        self.records: list = []
        self.params: list = []
        self._index: dict = {}

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().remove(self)

    def watch(self, tensor: Tensor) -> Tensor:
        """Designate a leaf as a parameter; returns a grad-tracking leaf."""
        if not tensor.requires_grad:
            tensor = Tensor._wrap(tensor.data.copy())
            tensor.requires_grad = True
        self.params.append(tensor)
        return tensor

    def _record(self, out, prim, inputs, attrs) -> None:
        self._index[id(out)] = len(self.records)
        self.records.append((out, prim, inputs, attrs))

    @property
    def root(self) -> Tensor:
        if not self.records:
            raise ContractError("empty tape")
        return self.records[-1][0]

    def __len__(self) -> int:
        return len(self.records)


def evaluate_graph(tape: Tape, inputs: dict, root: Tensor | None = None) -> Tensor:
    """Replay ``tape`` with new values bound to its leaves.

    ``inputs`` maps leaf tensors (or their ``name``) to arrays. Every
    designated parameter must be bound; other leaves keep their recorded value.
    """
    by_name = {k: v for k, v in inputs.items() if isinstance(k, str)}
    by_id = {id(k): v for k, v in inputs.items() if isinstance(k, Tensor)}
    for p in tape.params:
        if id(p) not in by_id and (p.name is None or p.name not in by_name):
            raise ContractError(f"no binding for parameter leaf {p.name or p.shape}")

    values: dict = {}

    def value_of(t: Tensor) -> np.ndarray:
        if id(t) in values:
            return values[id(t)]
        if id(t) in by_id:
            arr = np.asarray(by_id[id(t)], dtype=np.float64)
        elif t.name is not None and t.name in by_name:
            arr = np.asarray(by_name[t.name], dtype=np.float64)
        else:
            return t.data
        if arr.shape != t.shape:
            raise ShapeError("evaluate_graph", t.shape, arr.shape)
        values[id(t)] = arr
        return arr

    root = tape.root if root is None else root
    for out, prim, tensors, attrs in tape.records:
        with np.errstate(all="ignore"):
            arr = np.asarray(prim.forward(*(value_of(t) for t in tensors), **attrs), dtype=np.float64)
        _check_finite(prim.name, arr)
        values[id(out)] = arr
        if out is root:
            break
    return Tensor._wrap(np.array(value_of(root)))


def backward(tape: Tape, root: Tensor | None = None) -> list:
    """Gradient of the scalar root with respect to every designated parameter."""
    root = tape.root if root is None else root
    return grad(root, tape.params)

