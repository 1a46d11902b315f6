"""scikit-learn style classifier wrapping the joint training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.validation import check_is_fitted

from . import models
from .augment import GumbelConfig, init_augmenter, prefit_substitution_table
from .data import Dataset, Splits
from .errors import ConfigError
from .rewards import AugmentReward, DeltaReward, WeightReward, WeightTable
from .trainer import ReestimatedWeighting, TrainerConfig, baseline_proportion_weights, train_joint
from .validation import check_features, check_input_kind, check_training_data, encode_labels

MANIPULATIONS = ("none", "weight", "proportion", "ren", "augment")


class ManipulatedClassifier(ClassifierMixin, BaseEstimator):
    """Logistic or MLP classifier trained with a learned data manipulation.

    ``manipulation`` picks the scheme: ``"none"`` (maximum likelihood),
    ``"weight"`` (learned per-example weights), ``"proportion"`` (inverse
    class frequency), ``"ren"`` (per-step re-estimated weights) or
    ``"augment"`` (learned augmentation). Learned schemes need validation
    data; pass ``X_val``/``y_val`` to :meth:`fit` or let
    ``validation_fraction`` carve it out of the training set.

    With ``input_kind="token"`` each row of ``X`` is a sequence of token ids
    below ``vocab_size`` and the classifier sees bag-of-token counts.
    """

    def __init__(self, manipulation="weight", arch="logistic", hidden=16, lr_theta=0.5, lr_phi=0.1,
                 lr_look=None, epochs=10, batch_size=32, meta_mode="analytic", weight_mode="softmax",
                 decay=0.1, select_best=True, validation_fraction=0.1, input_kind="continuous",
                 vocab_size=None, n_substitutions=1, n_samples=2, tau=1.0, prefit_augmenter=True,
                 freeze_manipulation=False, random_state=0):
        self.manipulation = manipulation
        self.arch = arch
        self.hidden = hidden
        self.lr_theta = lr_theta
        self.lr_phi = lr_phi
        self.lr_look = lr_look
        self.epochs = epochs
        self.batch_size = batch_size
        self.meta_mode = meta_mode
        self.weight_mode = weight_mode
        self.decay = decay
        self.select_best = select_best
        self.validation_fraction = validation_fraction
        self.input_kind = input_kind
        self.vocab_size = vocab_size
        self.n_substitutions = n_substitutions
        self.n_samples = n_samples
        self.tau = tau
        self.prefit_augmenter = prefit_augmenter
        self.freeze_manipulation = freeze_manipulation
        self.random_state = random_state

    # ---------------------------------------------------------------- helpers

    def _dataset(self, X, y, ids) -> Dataset:
        vocab = self.vocab_size_ if self.input_kind == "token" else None
        return Dataset(X, y, ids, len(self.classes_), self.input_kind, vocab)

    def _reward(self, train: Dataset):
        m = self.manipulation
        if m == "none":
            return DeltaReward()
        if m == "weight":
            return WeightReward(WeightTable(train.ids, mode=self.weight_mode), frozen=self.freeze_manipulation)
        if m == "proportion":
            return WeightReward(baseline_proportion_weights(train), frozen=True)
        if m == "ren":
            return ReestimatedWeighting()
        variant = "token" if self.input_kind == "token" else "continuous"
        dim = self.vocab_size_ if variant == "token" else train.features.shape[1]
        a = init_augmenter(variant, train.n_classes, dim, self.hidden, seed=self.random_state)
        if variant == "token" and self.prefit_augmenter:
            a = prefit_substitution_table(a, train.features, train.labels)
        gumbel = GumbelConfig(tau=self.tau, n_substitutions=self.n_substitutions, n_samples=self.n_samples)
        return AugmentReward(a, gumbel, frozen=self.freeze_manipulation)

    def _needs_validation(self) -> bool:
        return self.manipulation == "ren" or (self.manipulation in ("weight", "augment")
                                              and not self.freeze_manipulation)

    # -------------------------------------------------------------------- API

    def fit(self, X, y, X_val=None, y_val=None):
        if self.manipulation not in MANIPULATIONS:
            raise ConfigError(f"manipulation must be one of {MANIPULATIONS}, got {self.manipulation!r}")
        check_input_kind(self.input_kind)
        if self.input_kind == "token" and self.vocab_size is None:
            raise ConfigError("token inputs need vocab_size")
        X, y = check_training_data(X, y, self.input_kind, self.vocab_size)
        self.classes_ = np.unique(y)
        self.vocab_size_ = self.vocab_size
        self.n_features_in_ = X.shape[1]
        yi = encode_labels(y, self.classes_)

        if X_val is None and self._needs_validation():
            X, X_val, yi, yv = train_test_split(X, yi, test_size=self.validation_fraction, stratify=yi,
                                                random_state=self.random_state)
        elif X_val is not None:
            X_val = check_features(X_val, self.input_kind, self.vocab_size)
            yv = encode_labels(y_val, self.classes_)
        else:
            X_val, yv = X[:0], yi[:0]

        train = self._dataset(X, yi, np.arange(len(yi)))
        val = self._dataset(X_val, yv, len(yi) + np.arange(len(yv)))
        empty = self._dataset(X[:0], yi[:0], np.zeros(0, dtype=np.int64))
        config = TrainerConfig(
            lr_theta=self.lr_theta, lr_phi=0.0 if self.freeze_manipulation else self.lr_phi,
            lr_look=self.lr_look, batch_size=self.batch_size, epochs=self.epochs, meta_mode=self.meta_mode,
            seed=self.random_state, decay=self.decay, select_best=self.select_best, arch=self.arch,
            hidden=self.hidden,
        )
        result = train_joint(config, Splits(train, val, empty), self._reward(train))
        self.params_ = result.params
        self.reward_ = result.reward
        self.history_ = result.reports
        self.best_epoch_ = result.best_epoch
        return self

    def _design(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_features(X, self.input_kind, self.vocab_size_)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but {type(self).__name__} "
                             f"is expecting {self.n_features_in_} features as input")
        if self.input_kind == "token":
            return self._dataset(X, np.zeros(len(X), dtype=np.int64), np.arange(len(X))).design_matrix()
        return X

    def decision_function(self, X) -> np.ndarray:
        return models.forward_logits(self.params_, self._design(X))

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        X = self._design(X)
        return self.classes_[models.predict(self.params_, X)]
