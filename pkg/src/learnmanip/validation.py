"""Input checks for the estimator layer.

Thin wrappers over :mod:`sklearn.utils.validation` that add the token-input
case and translate failures into package errors.
"""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length, column_or_1d

from .errors import ConfigError, DataError

INPUT_KINDS = ("continuous", "token")


def check_input_kind(kind: str) -> str:
    if kind not in INPUT_KINDS:
        raise ConfigError(f"input_kind must be one of {INPUT_KINDS}, got {kind!r}")
    return kind


def check_features(X, kind: str = "continuous", vocab_size: int | None = None) -> np.ndarray:
    """2-D finite float features, or 2-D integer token ids below ``vocab_size``."""
    check_input_kind(kind)
    try:
        if kind == "continuous":
            return check_array(X, dtype=np.float64)
        arr = check_array(X, dtype=None)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise DataError("token inputs must be integer ids")
        arr = arr.astype(np.int64)
    if arr.min() < 0 or (vocab_size is not None and arr.max() >= vocab_size):
        raise DataError(f"token ids must lie in [0, {vocab_size})")
    return arr.astype(np.int64)


def check_training_data(X, y, kind: str = "continuous", vocab_size: int | None = None):
    """Validated ``(X, y)`` with matching lengths and at least two classes."""
    X = check_features(X, kind, vocab_size)
    try:
        y = column_or_1d(y)
        check_consistent_length(X, y)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if np.unique(y).size < 2:
        raise DataError("need at least two classes in y")
    return X, y


def encode_labels(y, classes: np.ndarray) -> np.ndarray:
    """Map raw labels onto ``0..len(classes)-1``; unknown labels are an error."""
    y = np.asarray(y)
    idx = np.searchsorted(classes, y)
    idx = np.clip(idx, 0, len(classes) - 1)
    bad = classes[idx] != y
    if np.any(bad):
        raise DataError(f"labels not seen during fit: {sorted(set(y[bad].tolist()))}")
    return idx.astype(np.int64)
