"""Small differentiable classifiers: logistic regression and a tanh MLP."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .tensor import ParamVector, Tensor, grad, log_softmax, matmul, pick, tanh, tsum
from .tensor import Tape, backward

ARCHS = ("logistic", "mlp")
INIT_SCALE = 0.1


@dataclass
class ClassifierParams:
    """Weights of a classifier, stored as ``[W1, b1]`` or ``[W1, b1, W2, b2]``."""

    arch: str
    weights: list
    input_dim: int
    n_classes: int
    hidden: int | None = None

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown architecture {self.arch!r}; expected one of {ARCHS}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        expected = layer_shapes(self.arch, self.input_dim, self.n_classes, self.hidden)
        actual = [w.shape for w in self.weights]
        if actual != expected:
            raise ShapeError("ClassifierParams", expected, actual)

    @property
    def shapes(self) -> list:
        return [w.shape for w in self.weights]

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights)

    def to_vector(self) -> ParamVector:
        return ParamVector.from_arrays(self.weights)

    def with_vector(self, vec: ParamVector | np.ndarray) -> "ClassifierParams":
        flat = vec.flat if isinstance(vec, ParamVector) else vec
        arrays = ParamVector(flat, self.shapes).unflatten()
        return ClassifierParams(self.arch, arrays, self.input_dim, self.n_classes, self.hidden)


def layer_shapes(arch: str, input_dim: int, n_classes: int, hidden: int | None) -> list:
    if arch == "logistic":
        return [(input_dim, n_classes), (n_classes,)]
    if hidden is None or hidden < 1:
        raise ConfigError("mlp requires a positive hidden width")
    return [(input_dim, hidden), (hidden,), (hidden, n_classes), (n_classes,)]


def init_params(arch: str, input_dim: int, n_classes: int, hidden: int | None = 16,
                seed=0, zero: bool = False) -> ClassifierParams:
    """Uniform(-0.1, 0.1) initialization drawn from ``seed``."""
    hidden = hidden if arch == "mlp" else None
    shapes = layer_shapes(arch, input_dim, n_classes, hidden)
    rng = np.random.default_rng(seed)
    if zero:
        weights = [np.zeros(s) for s in shapes]
    else:
        weights = [rng.uniform(-INIT_SCALE, INIT_SCALE, size=s) for s in shapes]
    return ClassifierParams(arch, weights, input_dim, n_classes, hidden)


def logits_graph(arch: str, weights, X) -> Tensor:
    """Logits as a graph node; ``weights`` are Tensors in layer order."""
    X = X if isinstance(X, Tensor) else Tensor(X)
    if X.ndim != 2 or X.shape[1] != weights[0].shape[0]:
        raise ShapeError("forward_logits", f"(n, {weights[0].shape[0]})", X.shape)
    z = matmul(X, weights[0]) + weights[1]
    if arch == "mlp":
        z = matmul(tanh(z), weights[2]) + weights[3]
    return z


def _check_labels(y, n_classes: int, ids=None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeError("labels", "1-d", y.shape)
    bad = np.flatnonzero((y < 0) | (y >= n_classes))
    if bad.size:
        i = int(bad[0])
        who = int(ids[i]) if ids is not None else i
        raise DataError(f"label {int(y[i])} of example {who} outside [0, {n_classes})")
    return y.astype(np.int64)


def nll_graph(logits: Tensor, y, ids=None) -> Tensor:
    """Per-example negative log-likelihood as a graph node of shape (n,)."""
    y = _check_labels(y, logits.shape[1], ids)
    if y.shape[0] != logits.shape[0]:
        raise ShapeError("nll", logits.shape[0], y.shape[0])
    return -pick(log_softmax(logits), index=y)


def mean_nll_graph(arch: str, weights, X, y) -> Tensor:
    losses = nll_graph(logits_graph(arch, weights, X), y)
    return tsum(losses) * (1.0 / losses.shape[0])


@dataclass
class LossBatch:
    values: np.ndarray
    mean: float = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mean = float(self.values.mean()) if self.values.size else float("nan")


def forward_logits(params: ClassifierParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeError("forward_logits", f"(n, {params.input_dim})", X.shape)
    W = params.weights
    z = X @ W[0] + W[1]
    if params.arch == "mlp":
        z = np.tanh(z) @ W[2] + W[3]
    return z


def nll_per_example(logits, y, ids=None) -> LossBatch:
    logits = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    y = _check_labels(y, logits.shape[1], ids)
    if y.shape[0] != logits.shape[0]:
        raise ShapeError("nll_per_example", logits.shape[0], y.shape[0])
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return LossBatch(-logp[np.arange(len(y)), y])


def mean_nll(params: ClassifierParams, X, y) -> float:
    return nll_per_example(forward_logits(params, X), y).mean


def loss_and_grad(params: ClassifierParams, X, y, coefficients=None) -> tuple[float, np.ndarray]:
    """Weighted loss ``sum_i c_i l_i`` (mean when ``coefficients`` is None) and its flat gradient."""
    leaves = [Tensor(w, requires_grad=True) for w in params.weights]
    losses = nll_graph(logits_graph(params.arch, leaves, X), y)
    if coefficients is None:
        coefficients = np.full(losses.shape[0], 1.0 / losses.shape[0])
    loss = tsum(losses * np.asarray(coefficients, dtype=np.float64))
    grads = grad(loss, leaves)
    return loss.item(), ParamVector.from_arrays(grads).flat


def per_example_grads(params: ClassifierParams, X, y, method: str = "layerwise") -> np.ndarray:
    """Row i is the flattened gradient of example i's loss.

    ``layerwise`` runs one backward pass to the pre-activations and forms
    per-example outer products; ``replay`` runs a separate backward per
    example and is kept as the reference path.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise DataError("per_example_grads on an empty batch")
    if method == "replay":
        return np.stack([_single_example_grad(params, X[i:i + 1], y[i:i + 1]) for i in range(X.shape[0])])
    if method != "layerwise":
        raise ConfigError(f"unknown per-example gradient method {method!r}")

    W = [Tensor(w, requires_grad=True) for w in params.weights]
    Xt = Tensor(X)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeError("forward_logits", f"(n, {params.input_dim})", X.shape)
    z1 = matmul(Xt, W[0]) + W[1]
    if params.arch == "logistic":
        pre, inputs, out = [z1], [X], z1
    else:
        h = tanh(z1)
        z2 = matmul(h, W[2]) + W[3]
        pre, inputs, out = [z1, z2], [X, h.data], z2
    total = tsum(nll_graph(out, y))
    dpre = grad(total, pre)
    n = X.shape[0]
    blocks = []
    for inp, dz in zip(inputs, dpre):
        blocks.append(np.einsum("ni,nj->nij", inp, dz.data).reshape(n, -1))
        blocks.append(dz.data)
    return np.concatenate(blocks, axis=1)


def _single_example_grad(params: ClassifierParams, x, y) -> np.ndarray:
    with Tape() as tape:
        leaves = [tape.watch(Tensor(w)) for w in params.weights]
        mean_nll_graph(params.arch, leaves, x, y)
    return ParamVector.from_arrays(backward(tape)).flat


def predict(params: ClassifierParams, X) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. the lowest class on ties.
    return np.argmax(forward_logits(params, X), axis=1)


def accuracy(params: ClassifierParams, X, y) -> float:
    y = np.asarray(y)
    if y.size == 0:
        raise DataError("accuracy on an empty batch")
    return float(np.mean(predict(params, X) == y))
