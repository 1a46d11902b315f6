"""Datasets, synthetic generators, subsampling protocols and file loaders."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError

KINDS = ("continuous", "token")


@dataclass(frozen=True)
class Dataset:
    """Rows of features (or token ids) with integer labels and stable ids."""

    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    n_classes: int
    kind: str = "continuous"
    vocab_size: int | None = None
    positive_tokens: tuple | None = None
    _pos: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        dtype = np.int64 if self.kind == "token" else np.float64
        features = np.asarray(self.features, dtype=dtype)
        labels = np.asarray(self.labels, dtype=np.int64)
        ids = np.asarray(self.ids, dtype=np.int64)
        n = labels.shape[0]
        if features.ndim != 2 or features.shape[0] != n or ids.shape != (n,):
            raise DataError(f"inconsistent dataset shapes: features {features.shape}, "
                            f"labels {labels.shape}, ids {ids.shape}")
        if len(np.unique(ids)) != n:
            raise DataError("dataset ids are not unique")
        if n and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise DataError(f"labels outside [0, {self.n_classes})")
        if self.kind == "token":
            if self.vocab_size is None:
                raise DataError("token dataset requires vocab_size")
            if features.size and (features.min() < 0 or features.max() >= self.vocab_size):
                raise DataError(f"token ids outside [0, {self.vocab_size})")
        for arr in (features, labels, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "_pos", {int(i): k for k, i in enumerate(ids)})

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.vocab_size if self.kind == "token" else self.features.shape[1]

    def class_counts(self) -> dict:
        return {c: int(np.sum(self.labels == c)) for c in range(self.n_classes)}

    def positions(self, ids) -> np.ndarray:
        try:
            return np.array([self._pos[int(i)] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"id {exc.args[0]} not in dataset") from None

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.labels[rows], self.ids[rows], self.n_classes,
                       self.kind, self.vocab_size, self.positive_tokens)

    def by_ids(self, ids) -> "Dataset":
        return self.subset(self.positions(ids))

    def design_matrix(self, rows=None) -> np.ndarray:
        """Classifier inputs: raw features, or bag-of-token counts for token data."""
        feats = self.features if rows is None else self.features[np.asarray(rows, dtype=np.int64)]
        if self.kind == "continuous":
            return feats
        return token_counts(feats, self.vocab_size)


def token_counts(tokens: np.ndarray, vocab_size: int) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    n, L = tokens.shape
    out = np.zeros((n, vocab_size))
    np.add.at(out, (np.repeat(np.arange(n), L), tokens.ravel()), 1.0)
    return out


def merge(*parts: Dataset) -> Dataset:
    first = parts[0]
    return Dataset(np.concatenate([p.features for p in parts]), np.concatenate([p.labels for p in parts]),
                   np.concatenate([p.ids for p in parts]), first.n_classes, first.kind,
                   first.vocab_size, first.positive_tokens)


@dataclass(frozen=True)
class Splits:
    train: Dataset
    validation: Dataset
    test: Dataset

    def __post_init__(self):
        sets = [set(self.train.ids.tolist()), set(self.validation.ids.tolist()), set(self.test.ids.tolist())]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise DataError("splits share example ids")


# ----------------------------------------------------------------- generators


def default_blob_means(n_classes: int = 2, dim: int = 2, separation: float = 4.0) -> list:
    """Class means spaced ``separation`` apart along the first axis."""
    offsets = (np.arange(n_classes) - (n_classes - 1) / 2.0) * separation
    means = np.zeros((n_classes, dim))
    means[:, 0] = offsets
    return [m for m in means]


def gen_blobs(seed, per_class_counts: Sequence[int], means: Sequence, stddev: float = 1.0) -> Dataset:
    """Isotropic Gaussian clusters, class ``c`` centred on ``means[c]``."""
    counts = [int(c) for c in per_class_counts]
    means = np.asarray(means, dtype=np.float64)
    if len(counts) < 2:
        raise ConfigError(f"need at least 2 classes, got {len(counts)}")
    if means.ndim != 2 or means.shape[0] != len(counts):
        raise ConfigError(f"{len(counts)} class counts but means of shape {means.shape}")
    if stddev < 0:
        raise ConfigError(f"stddev must be non-negative, got {stddev}")
    if min(counts) < 0:
        raise ConfigError("class counts must be non-negative")
    rng = np.random.default_rng(seed)
    X = np.concatenate([means[c] + stddev * rng.standard_normal((n, means.shape[1]))
                        for c, n in enumerate(counts)])
    y = np.repeat(np.arange(len(counts)), counts)
    return Dataset(X, y, np.arange(len(y)), len(counts))


def gen_token_task(seed, V: int = 32, L: int = 8, per_class_counts: Sequence[int] = (500, 500)) -> Dataset:
    """Binary token sequences: class 1 iff a token from the positive set occurs.

    The positive set has ``V // 4`` tokens chosen by ``seed``. Class-0 rows draw
    every token from the complement; class-1 rows do the same and then
    overwrite one random position with a positive token.
    """
    counts = [int(c) for c in per_class_counts]
    if V < 4 or L < 2:
        raise ConfigError(f"token task needs V >= 4 and L >= 2, got V={V}, L={L}")
    if len(counts) != 2:
        raise ConfigError("token task is binary; pass two class counts")
    if min(counts) <= 0:
        raise ConfigError(f"every class needs at least one example, got {counts}")
    rng = np.random.default_rng(seed)
    positive = np.sort(rng.choice(V, size=V // 4, replace=False))
    complement = np.setdiff1d(np.arange(V), positive)
    rows = complement[rng.integers(0, len(complement), size=(sum(counts), L))]
    labels = np.repeat([0, 1], counts)
    ones = np.flatnonzero(labels == 1)
    where = rng.integers(0, L, size=len(ones))
    rows[ones, where] = positive[rng.integers(0, len(positive), size=len(ones))]
    order = rng.permutation(len(labels))
    return Dataset(rows[order], labels[order], np.arange(len(labels)), 2, kind="token",
                   vocab_size=V, positive_tokens=tuple(int(p) for p in positive))


def token_rule_labels(tokens: np.ndarray, positive_tokens) -> np.ndarray:
    """Recompute labels from the generating rule (membership of any positive token)."""
    return np.isin(np.asarray(tokens), np.asarray(positive_tokens)).any(axis=1).astype(np.int64)


# ------------------------------------------------------------------ protocols


def _stratified_split(d: Dataset, seed, train: dict, val: dict, test: dict) -> Splits:
    rng = np.random.default_rng(seed)
    deficits = {}
    chosen = ([], [], [])
    for c in range(d.n_classes):
        rows = np.flatnonzero(d.labels == c)
        need = train.get(c, 0) + val.get(c, 0) + test.get(c, 0)
        if need > len(rows):
            deficits[c] = need - len(rows)
            continue
        rows = rng.permutation(rows)
        cuts = np.cumsum([train.get(c, 0), val.get(c, 0), test.get(c, 0)])
        chosen[0].append(rows[:cuts[0]])
        chosen[1].append(rows[cuts[0]:cuts[1]])
        chosen[2].append(rows[cuts[1]:cuts[2]])
    if deficits:
        detail = ", ".join(f"class {c}: short by {k}" for c, k in deficits.items())
        raise DataError(f"not enough examples per class ({detail})", deficits)
    parts = [d.subset(np.sort(np.concatenate(rows))) for rows in chosen]
    return Splits(*parts)


def subsample_low_data(d: Dataset, seed, n_train_per_class: int = 40, n_val_per_class: int = 2,
                       n_test_per_class: int = 1000) -> Splits:
    """Same number of train/validation/test examples from every class."""
    per = lambda k: {c: int(k) for c in range(d.n_classes)}  # noqa: E731
    return _stratified_split(d, seed, per(n_train_per_class), per(n_val_per_class), per(n_test_per_class))


def subsample_imbalanced(d: Dataset, seed, minority_count: int = 20, majority_count: int = 1000,
                         n_val_per_class: int = 10, n_test_per_class: int = 1000,
                         minority_class: int = 0) -> Splits:
    """Binary imbalance: ``minority_count`` vs ``majority_count`` training examples."""
    if d.n_classes != 2:
        raise ConfigError(f"imbalance protocol needs a binary dataset, got {d.n_classes} classes")
    if minority_class not in (0, 1):
        raise ConfigError(f"minority_class must be 0 or 1, got {minority_class}")
    train = {minority_class: int(minority_count), 1 - minority_class: int(majority_count)}
    both = {0: int(n_val_per_class), 1: int(n_val_per_class)}
    test = {0: int(n_test_per_class), 1: int(n_test_per_class)}
    return _stratified_split(d, seed, train, both, test)


def minibatches(d: Dataset, batch_size: int, seed, epoch: int) -> list:
    """Id batches covering a permutation that depends only on ``(seed, epoch)``."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng([int(seed), int(epoch)])
    perm = d.ids[rng.permutation(len(d))]
    return [perm[i:i + batch_size] for i in range(0, len(perm), batch_size)]


# -------------------------------------------------------------------- loaders


def load_external(path, fmt: str | None = None, labels_path=None) -> Dataset:
    """Load a CSV file (label in the last column) or an IDX image/label pair."""
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "idx"
    if fmt == "csv":
        return _load_csv(path)
    if fmt == "idx":
        if labels_path is None:
            labels_path = _sibling_labels(path)
        images = read_idx(path)
        labels = read_idx(labels_path)
        if images.shape[0] != labels.shape[0]:
            raise ParseError(f"{images.shape[0]} images but {labels.shape[0]} labels")
        X = images.reshape(images.shape[0], -1).astype(np.float64)
        if images.dtype == np.uint8:
            X /= 255.0
        y = labels.astype(np.int64).ravel()
        return Dataset(X, y, np.arange(len(y)), int(y.max()) + 1 if len(y) else 2)
    raise ConfigError(f"unknown external format {fmt!r}; expected 'csv' or 'idx'")


def _sibling_labels(path: Path) -> Path:
    name = path.name
    for a, b in (("images-idx3", "labels-idx1"), ("images.idx3", "labels.idx1"), ("images", "labels")):
        if a in name:
            return path.with_name(name.replace(a, b))
    raise ConfigError(f"cannot infer label file for {path}; pass labels_path")


def _load_csv(path: Path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, header row required") from None
        width = len(header)
        if width < 2:
            raise ParseError(f"{path}: line 1: need at least one feature and a label column")
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(f"{path}: line {lineno}: expected {width} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row[:-1]])
                labels.append(int(row[-1]))
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    y = np.array(labels)
    if y.min() < 0:
        raise ParseError(f"{path}: negative label")
    return Dataset(np.array(rows), y, np.arange(len(y)), max(int(y.max()) + 1, 2))


_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def read_idx(path) -> np.ndarray:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    return parse_idx(raw, str(path))


def parse_idx(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    """Decode an IDX buffer: two zero bytes, type code, rank, big-endian dims, payload."""
    if len(raw) < 4:
        raise ParseError(f"{source}: byte 0: truncated magic number ({len(raw)} bytes)")
    if raw[0] != 0 or raw[1] != 0:
        raise ParseError(f"{source}: byte 0: bad magic number 0x{raw[:4].hex()}")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_TYPES:
        raise ParseError(f"{source}: byte 2: unknown IDX type code 0x{code:02x}")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise ParseError(f"{source}: byte 4: truncated dimensions, expected {header_end} header bytes, "
                         f"got {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    dtype = _IDX_TYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    actual = len(raw) - header_end
    if actual != expected:
        raise ParseError(f"{source}: byte {header_end}: expected {expected} payload bytes, got {actual}")
    return np.frombuffer(raw, dtype=dtype, offset=header_end).reshape(dims).astype(dtype.newbyteorder("="))
