"""Learnable augmentation functions.

Two variants: a bounded additive perturbation network for real-valued
features, and a label-conditional token substitution table whose samples are
relaxed with gumbel-softmax so that gradients reach the table.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .tensor import ParamVector, Tensor, clip, matmul, scatter_rows, softmax, take_rows, tanh

VARIANTS = ("continuous", "token")


@dataclass
class GumbelConfig:
    tau: float = 1.0
    anneal: float = 0.7
    tau_floor: float = 0.1
    n_substitutions: int = 1
    n_samples: int = 2

    def __post_init__(self):
        if not self.tau > 0 or not self.tau_floor > 0:
            raise ConfigError("gumbel temperature must be positive")
        if self.n_substitutions < 0 or self.n_samples < 0:
            raise ConfigError("substitution and sample counts must be non-negative")

    def temperature(self, epoch: int) -> float:
        return max(self.tau_floor, self.tau * self.anneal ** epoch)


@dataclass
class AugmentParams:
    """Parameters of an augmentation network.

    continuous: ``[W_x (d, h), W_y (C, h), b_1 (h,), W_out (h, d), b_out (d,)]``
    token: ``[table (C * V, V)]`` where row ``y * V + s`` holds the logits of
    replacing source token ``s`` under label ``y``.
    """

    variant: str
    weights: list
    n_classes: int
    dim: int
    hidden: int | None = None
    bound: float = 1.0
    sigma: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown augmentation variant {self.variant!r}")
        if self.bound < 0 or self.sigma < 0:
            raise ConfigError("bound and sigma must be non-negative")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        if [w.shape for w in self.weights] != self._expected_shapes():
            raise ShapeError("AugmentParams", self._expected_shapes(), [w.shape for w in self.weights])

    def _expected_shapes(self) -> list:
        C, d = self.n_classes, self.dim
        if self.variant == "token":
            return [(C * d, d)]
        h = self.hidden
        return [(d, h), (C, h), (h,), (h, d), (d,)]

    @property
    def shapes(self) -> list:
        return [w.shape for w in self.weights]

    @property
    def table(self) -> np.ndarray:
        """Substitution logits as a (C, V, V) array (token variant)."""
        if self.variant != "token":
            raise ContractError("only the token variant has a substitution table")
        return self.weights[0].reshape(self.n_classes, self.dim, self.dim)

    def to_vector(self) -> ParamVector:
        return ParamVector.from_arrays(self.weights)

    def with_vector(self, vec) -> "AugmentParams":
        flat = vec.flat if isinstance(vec, ParamVector) else vec
        arrays = ParamVector(flat, self.shapes).unflatten()
        return AugmentParams(self.variant, arrays, self.n_classes, self.dim, self.hidden, self.bound, self.sigma)

    def tensors(self, requires_grad: bool = True) -> list:
        return [Tensor(w, requires_grad=requires_grad) for w in self.weights]


def init_augmenter(variant: str, n_classes: int, dim: int, hidden: int = 16, seed=0,
                   bound: float = 1.0, sigma: float = 0.1) -> AugmentParams:
    """Identity-at-initialization augmenter.

    The perturbation net gets a zero output layer; the substitution table
    starts uniform.
    """
    if variant == "token":
        return AugmentParams("token", [np.zeros((n_classes * dim, dim))], n_classes, dim)
    rng = np.random.default_rng(seed)
    weights = [
        rng.uniform(-0.1, 0.1, size=(dim, hidden)),
        rng.uniform(-0.1, 0.1, size=(n_classes, hidden)),
        np.zeros(hidden),
        np.zeros((hidden, dim)),
        np.zeros(dim),
    ]
    return AugmentParams("continuous", weights, n_classes, dim, hidden, bound, sigma)


def prefit_substitution_table(p: AugmentParams, tokens, labels, smoothing: float = 1.0) -> AugmentParams:
    """Warm start: every source row gets the label-conditional unigram log-frequencies."""
    if p.variant != "token":
        raise ContractError("prefit applies to the token variant")
    V, C = p.dim, p.n_classes
    tokens = np.asarray(tokens, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    table = np.empty((C, V, V))
    for c in range(C):
        counts = np.bincount(tokens[labels == c].ravel(), minlength=V) + smoothing
        table[c] = np.log(counts / counts.sum())[None, :]
    return AugmentParams("token", [table.reshape(C * V, V)], C, V)


def _leaves(p: AugmentParams, leaves):
    return p.tensors(requires_grad=False) if leaves is None else leaves


def _one_hot(y, n: int) -> np.ndarray:
    out = np.zeros((len(y), n))
    out[np.arange(len(y)), np.asarray(y, dtype=np.int64)] = 1.0
    return out


def augment_continuous(p: AugmentParams, x_star, y, noise, leaves=None) -> Tensor:
    """``x* + clip(net(x*, y) + sigma * noise, -bound, bound)`` row by row.

    Pass ``leaves`` (Tensors matching ``p.weights``) to differentiate with
    respect to the network parameters. 1-d inputs are treated as one row.
    """
    if p.variant != "continuous":
        raise ContractError("augment_continuous needs the continuous variant")
    X = np.atleast_2d(np.asarray(x_star, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    if X.shape[1] != p.dim:
        raise ShapeError("augment_continuous", f"(n, {p.dim})", X.shape)
    if noise.shape != X.shape or y.shape != (X.shape[0],):
        raise ShapeError("augment_continuous", X.shape, f"noise {noise.shape}, labels {y.shape}")
    Wx, Wy, b1, Wo, bo = _leaves(p, leaves)
    h = tanh(matmul(Tensor(X), Wx) + matmul(Tensor(_one_hot(y, p.n_classes)), Wy) + b1)
    delta = matmul(h, Wo) + bo + Tensor(p.sigma * noise)
    return Tensor(X) + clip(delta, lo=-p.bound, hi=p.bound)


def _flat_selection(tokens: np.ndarray, y: np.ndarray, positions, V: int):
    n, L = tokens.shape
    if len(positions) != n:
        raise ContractError(f"{n} sequences but {len(positions)} position lists")
    flat_rows, table_rows = [], []
    for i, pos in enumerate(positions):
        pos = np.asarray(pos, dtype=np.int64).ravel()
        if len(np.unique(pos)) != len(pos):
            raise ContractError(f"duplicate substitution positions {pos.tolist()} in sequence {i}")
        if pos.size and (pos.min() < 0 or pos.max() >= L):
            raise ContractError(f"substitution positions {pos.tolist()} outside [0, {L})")
        flat_rows.extend(i * L + pos)
        table_rows.extend(y[i] * V + tokens[i, pos])
    return np.asarray(flat_rows, dtype=np.int64), np.asarray(table_rows, dtype=np.int64)


def augment_discrete_relaxed(p: AugmentParams, tokens, y, positions, gumbel_noise, tau: float,
                             leaves=None) -> Tensor:
    """Relaxed one-hot rows for token sequences with substituted positions.

    ``tokens`` is (L,) or (n, L); ``positions`` lists the substituted indices
    per sequence; ``gumbel_noise`` has one (V,) row per substituted position in
    sequence-major order. Returns an (n * L, V) matrix: unselected rows are
    exact one-hots, selected row j is ``softmax((logits[y, tokens_j] + g_j) / tau)``.
    """
    if p.variant != "token":
        raise ContractError("augment_discrete_relaxed needs the token variant")
    if not tau > 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    tokens = np.asarray(tokens, dtype=np.int64)
    single = tokens.ndim == 1
    if single:
        tokens = tokens[None, :]
        positions = [positions]
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    n, L = tokens.shape
    V = p.dim
    flat_rows, table_rows = _flat_selection(tokens, y, positions, V)
    base = _one_hot(tokens.ravel(), V)
    if not flat_rows.size:
        return Tensor(base)
    noise = np.asarray(gumbel_noise, dtype=np.float64).reshape(-1, V)
    if noise.shape[0] != flat_rows.size:
        raise ShapeError("augment_discrete_relaxed", f"({flat_rows.size}, {V}) gumbel noise", noise.shape)
    base[flat_rows] = 0.0
    (table,) = _leaves(p, leaves)
    scores = (take_rows(table, index=table_rows) + Tensor(noise)) * (1.0 / tau)
    soft = softmax(scores)
    return Tensor(base) + scatter_rows(soft, index=flat_rows, n=n * L)


def sample_gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    return -np.log(-np.log(u))


def harden(relaxed) -> np.ndarray:
    """Row-wise argmax, lowest index on ties."""
    arr = relaxed.data if isinstance(relaxed, Tensor) else np.asarray(relaxed)
    return np.argmax(arr, axis=-1)


def pool_rows(relaxed: Tensor, n: int, L: int) -> Tensor:
    """Sum each sequence's L rows: (n * L, V) -> (n, V) bag-of-token counts."""
    pool = np.kron(np.eye(n), np.ones((1, L)))
    return matmul(Tensor(pool), relaxed)


@dataclass
class AugmentationDraw:
    """Randomness for one augmented minibatch, reused by lookahead and real step."""

    source: np.ndarray  # row of the original example for each augmented sample
    noise: np.ndarray
    positions: list | None = None


def draw_augmentation(rng: np.random.Generator, p: AugmentParams, n: int, gumbel: GumbelConfig,
                      seq_len: int | None = None) -> AugmentationDraw:
    m = gumbel.n_samples
    source = np.repeat(np.arange(n), m)
    if p.variant == "continuous":
        return AugmentationDraw(source, rng.standard_normal((n * m, p.dim)))
    k = gumbel.n_substitutions
    if seq_len is None or k > seq_len:
        raise ConfigError(f"substitution count {k} exceeds sequence length {seq_len}")
    positions = [np.sort(rng.choice(seq_len, size=k, replace=False)) for _ in range(n * m)]
    noise = sample_gumbel(rng, (n * m * k, p.dim))
    return AugmentationDraw(source, noise, positions)


def augmented_features(p: AugmentParams, inputs, y, draw: AugmentationDraw, tau: float,
                       leaves=None) -> Tensor:
    """Classifier inputs for the augmented copies described by ``draw``."""
    inputs = np.asarray(inputs)
    src_y = np.asarray(y)[draw.source]
    if p.variant == "continuous":
        return augment_continuous(p, inputs[draw.source], src_y, draw.noise, leaves)
    seqs = inputs[draw.source]
    relaxed = augment_discrete_relaxed(p, seqs, src_y, draw.positions, draw.noise, tau, leaves)
    return pool_rows(relaxed, seqs.shape[0], seqs.shape[1])


def substitution_summary(p: AugmentParams) -> dict:
    if p.variant == "continuous":
        return {"param_norm": float(np.sqrt(sum(np.sum(w * w) for w in p.weights)))}
    logits = p.weights[0]
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs = z / z.sum(axis=1, keepdims=True)
    return {"param_norm": float(np.linalg.norm(logits)), "mean_max_prob": float(probs.max(axis=1).mean())}


def dump_augmented_samples(path, originals, augmented, labels) -> None:
    """Write ``original tokens -> augmented tokens<TAB>label`` lines."""
    lines = []
    for orig, aug, lab in zip(np.asarray(originals), np.asarray(augmented), np.asarray(labels)):
        lines.append(f"{' '.join(map(str, orig))} -> {' '.join(map(str, aug))}\t{int(lab)}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
