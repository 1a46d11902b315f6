"""Data-reward parameterizations and the per-example weight table."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, ContractError, DataError, NumericOverflowError

WEIGHT_MODES = ("softmax", "linear")
LINEAR_FLOOR = 1e-8
DEFAULT_DECAY = 0.1


class _Unsupported:
    """Marks a pair outside the reward's support (the ``-inf`` case)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "UNSUPPORTED"

    def __bool__(self) -> bool:
        return False


UNSUPPORTED = _Unsupported()


class WeightTable:
    """One real-valued weight per training example id.

    In ``softmax`` mode the values are logits normalized within each
    minibatch; in ``linear`` mode they are weights normalized by their sum
    after flooring at ``1e-8``.
    """

    def __init__(self, ids, values=None, mode: str = "softmax"):
        if mode not in WEIGHT_MODES:
            raise ConfigError(f"unknown weight normalization {mode!r}; expected one of {WEIGHT_MODES}")
        ids = np.asarray(ids, dtype=np.int64)
        if len(np.unique(ids)) != len(ids):
            raise ContractError("weight table ids must be unique")
        if values is None:
            values = np.zeros(len(ids)) if mode == "softmax" else np.ones(len(ids))
        values = np.array(values, dtype=np.float64)
        if values.shape != ids.shape:
            raise ContractError(f"{len(ids)} ids but {values.shape} values")
        if not np.all(np.isfinite(values)):
            raise NumericOverflowError("weight table values must be finite")
        self.ids = ids
        self.values = values
        self.mode = mode
        self._pos = {int(i): k for k, i in enumerate(ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def __repr__(self) -> str:
        return f"WeightTable(n={len(self)}, mode={self.mode!r})"

    def positions(self, ids) -> np.ndarray:
        out = np.empty(len(ids), dtype=np.int64)
        for k, i in enumerate(ids):
            pos = self._pos.get(int(i))
            if pos is None:
                raise ContractError(f"example id {int(i)} is not in the weight table")
            out[k] = pos
        return out

    def get(self, ids) -> np.ndarray:
        return self.values[self.positions(ids)]

    def copy(self) -> "WeightTable":
        return WeightTable(self.ids.copy(), self.values.copy(), self.mode)

    def save(self, path) -> None:
        lines = ["id\tweight"] + [f"{int(i)}\t{float(v)!r}" for i, v in zip(self.ids, self.values)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, mode: str = "softmax") -> "WeightTable":
        ids, values = [], []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if lineno == 1 or not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}: line {lineno}: expected 2 columns, got {len(parts)}")
            ids.append(int(parts[0]))
            values.append(float(parts[1]))
        return cls(ids, values, mode)


def batch_coefficients(w: WeightTable, batch_ids) -> np.ndarray:
    """Convex combination coefficients over the examples of one minibatch."""
    if len(batch_ids) == 0:
        raise ContractError("batch_coefficients on an empty batch")
    phi = w.get(batch_ids)
    if w.mode == "softmax":
        z = np.exp(phi - phi.max())
        return z / z.sum()
    z = np.maximum(phi, LINEAR_FLOOR)
    return z / z.sum()


def coefficient_vjp(w: WeightTable, batch_ids, a) -> np.ndarray:
    """Derivative of ``sum_i c_i a_i`` with respect to each batch weight."""
    a = np.asarray(a, dtype=np.float64)
    c = batch_coefficients(w, batch_ids)
    centred = a - c @ a
    if w.mode == "softmax":
        return c * centred
    phi = w.get(batch_ids)
    total = np.maximum(phi, LINEAR_FLOOR).sum()
    return np.where(phi > LINEAR_FLOOR, centred / total, 0.0)


def apply_weight_update(w: WeightTable, batch_ids, meta_grads, decay: float = DEFAULT_DECAY) -> WeightTable:
    """``phi_i <- decay * phi_i + g_i`` for the batch ids; all other entries untouched."""
    if not 0.0 <= decay <= 1.0:
        raise ContractError(f"decay must lie in [0, 1], got {decay}")
    g = np.asarray(meta_grads, dtype=np.float64)
    if g.shape != (len(batch_ids),):
        raise ContractError(f"{len(batch_ids)} batch ids but meta-gradients of shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericOverflowError("non-finite meta-gradient in weight update")
    out = w.copy()
    pos = out.positions(batch_ids)
    out.values[pos] = decay * out.values[pos] + g
    return out


# -------------------------------------------------------------------- rewards


@dataclass
class DeltaReward:
    """Unit reward on exact training pairs; training reduces to maximum likelihood."""

    variant: str = field(default="delta", init=False)


@dataclass
class WeightReward:
    table: WeightTable
    frozen: bool = False
    variant: str = field(default="weight", init=False)


@dataclass
class AugmentReward:
    params: Any  # augment.AugmentParams
    gumbel: Any = None  # augment.GumbelConfig
    frozen: bool = False
    variant: str = field(default="augment", init=False)


@dataclass(frozen=True)
class AugmentedSample:
    """An augmented input together with the id of the example it came from."""

    values: np.ndarray
    source_id: int


def _matching_rows(D, x, y) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != D.features.shape[1:]:
        return np.zeros(0, dtype=np.int64)
    hit = np.all(D.features == x, axis=1) & (D.labels == y)
    return np.flatnonzero(hit)


def reward_value(r, x, y, D):
    """Reward of the pair ``(x, y)`` given training set ``D``, or :data:`UNSUPPORTED`."""
    if r.variant == "delta":
        return 1.0 if _matching_rows(D, x, y).size else UNSUPPORTED
    if r.variant == "weight":
        rows = _matching_rows(D, x, y)
        if not rows.size:
            return UNSUPPORTED
        return float(r.table.get([D.ids[rows[0]]])[0])
    if r.variant == "augment":
        if not isinstance(x, AugmentedSample):
            return UNSUPPORTED
        try:
            (row,) = D.positions([x.source_id])
        except DataError:
            return UNSUPPORTED
        return 1.0 if int(D.labels[row]) == int(y) else UNSUPPORTED
    raise ContractError(f"unknown reward variant {r.variant!r}")
