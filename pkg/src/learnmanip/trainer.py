"""Joint training of a classifier and its data manipulation.

Each minibatch iteration alternates a manipulation-enriched model step with
a manipulation step that ascends the validation log-likelihood through a
one-step lookahead of the model parameters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import augment as aug_mod
from .augment import AugmentationDraw, AugmentParams, GumbelConfig
from .data import Dataset, Splits, minibatches
from .errors import ConfigError, ContractError, NumericOverflowError, TrainingDiverged
from .models import (
    ClassifierParams,
    accuracy,
    init_params,
    logits_graph,
    loss_and_grad,
    mean_nll,
    nll_graph,
    per_example_grads,
)
from .rewards import (
    DEFAULT_DECAY,
    AugmentReward,
    DeltaReward,
    WeightReward,
    WeightTable,
    apply_weight_update,
    batch_coefficients,
    coefficient_vjp,
)
from .tensor import ParamVector, Tensor, dot, grad, tsum

log = logging.getLogger(__name__)

META_MODES = ("analytic", "hvp_fd")
ORDERS = ("phi_first", "theta_first")
DIVERGENCE_THRESHOLD = 1e6


@dataclass
class TrainerConfig:
    lr_theta: float = 0.5
    lr_phi: float = 0.1
    lr_look: float | None = None
    batch_size: int = 32
    epochs: int = 10
    phi_steps: int = 1
    meta_mode: str = "analytic"
    seed: int = 0
    order: str = "phi_first"
    momentum: float = 0.0
    decay: float = DEFAULT_DECAY
    hvp_delta: float = 1e-2
    select_best: bool = True
    max_steps: int | None = None
    arch: str = "mlp"
    hidden: int = 16

    def __post_init__(self):
        if not self.lr_theta > 0 or (self.lr_look is not None and not self.lr_look > 0):
            raise ConfigError("lr_theta and lr_look must be positive")
        if self.lr_phi < 0:
            raise ConfigError("lr_phi must be non-negative")
        if self.epochs < 1 or self.batch_size < 1 or self.phi_steps < 1:
            raise ConfigError("epochs, batch_size and phi_steps must be >= 1")
        if self.meta_mode not in META_MODES:
            raise ConfigError(f"meta_mode must be one of {META_MODES}")
        if self.order not in ORDERS:
            raise ConfigError(f"order must be one of {ORDERS}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")

    @property
    def look(self) -> float:
        return self.lr_theta if self.lr_look is None else self.lr_look


@dataclass
class StepReport:
    epoch: int
    step: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    test_accuracy: float | None = None
    manipulation: dict = field(default_factory=dict)


@dataclass
class ReestimatedWeighting:
    """Weights re-derived from validation gradients at every step, with no state kept."""

    variant: str = field(default="ren", init=False)


@dataclass
class TrainResult:
    params: ClassifierParams
    reward: object
    reports: list
    best_epoch: int
    best_step: int
    steps: int


# ------------------------------------------------------------ model updates


def _theta(params: ClassifierParams) -> np.ndarray:
    return params.to_vector().flat


def baseline_mle_step(params: ClassifierParams, X, y, lr: float) -> ClassifierParams:
    """Plain gradient step on the mean negative log-likelihood of the batch."""
    _, g = loss_and_grad(params, X, y)
    return params.with_vector(_theta(params) - lr * g)


def weighted_theta_step(params: ClassifierParams, X, y, batch_ids, w: WeightTable, lr: float,
                        G: np.ndarray | None = None) -> ClassifierParams:
    c = batch_coefficients(w, batch_ids)
    if G is None:
        G = per_example_grads(params, X, y)
    return params.with_vector(_theta(params) - lr * (c @ G))


def _val_grad(params: ClassifierParams, theta: np.ndarray, X_val, y_val) -> np.ndarray:
    if len(y_val) == 0:
        raise ConfigError("meta-gradient needs a non-empty validation set")
    _, v = loss_and_grad(params.with_vector(theta), X_val, y_val)
    return v


def meta_grad_weighting(params: ClassifierParams, X, y, batch_ids, w: WeightTable, X_val, y_val,
                        lr_look: float, G: np.ndarray | None = None) -> np.ndarray:
    """Derivative of the validation log-likelihood after a lookahead step, per batch weight.

    With ``c`` the batch coefficients, the lookahead is
    ``theta - lr_look * sum_i c_i g_i``; positive output means raising that
    example's weight lowers the validation loss.
    """
    if len(y_val) == 0:
        raise ConfigError("meta-gradient needs a non-empty validation set")
    if G is None:
        G = per_example_grads(params, X, y)
    c = batch_coefficients(w, batch_ids)
    lookahead = _theta(params) - lr_look * (c @ G)
    v = _val_grad(params, lookahead, X_val, y_val)
    return lr_look * coefficient_vjp(w, batch_ids, G @ v)


def baseline_ren_step(params: ClassifierParams, X, y, X_val, y_val, lr: float, lr_look: float | None = None,
                      G: np.ndarray | None = None) -> tuple[ClassifierParams, np.ndarray]:
    """One step with weights re-estimated from scratch; returns the new params and the weights used."""
    lr_look = lr if lr_look is None else lr_look
    if G is None:
        G = per_example_grads(params, X, y)
    n = G.shape[0]
    lookahead = _theta(params) - lr_look * G.mean(axis=0)
    influence = G @ _val_grad(params, lookahead, X_val, y_val)
    w = np.maximum(influence, 0.0)
    w = w / w.sum() if w.sum() > 0 else np.full(n, 1.0 / n)
    return params.with_vector(_theta(params) - lr * (w @ G)), w


# -------------------------------------------------------------- augmentation


def _augmented_loss(arch: str, theta_leaves, a: AugmentParams, a_leaves, inputs, feats, y,
                    draw: AugmentationDraw, tau: float) -> Tensor:
    """Mean NLL over the originals plus their augmented copies."""
    y = np.asarray(y)
    total = tsum(nll_graph(logits_graph(arch, theta_leaves, feats), y))
    count = len(y)
    if draw.source.size:
        aug_feats = aug_mod.augmented_features(a, inputs, y, draw, tau, a_leaves)
        total = total + tsum(nll_graph(logits_graph(arch, theta_leaves, aug_feats), y[draw.source]))
        count += draw.source.size
    return total * (1.0 / count)


@dataclass
class AugmentedStep:
    params: ClassifierParams
    loss: float
    draw: AugmentationDraw
    tau: float


def augmented_theta_step(params: ClassifierParams, inputs, feats, y, a: AugmentParams, gumbel: GumbelConfig,
                         lr: float, draw: AugmentationDraw | None = None, seed=0, epoch: int = 0
                         ) -> AugmentedStep:
    """Gradient step on originals together with ``gumbel.n_samples`` augmented copies each.

    ``inputs`` are raw rows (features or token ids), ``feats`` the
    classifier inputs for the originals. The same ``draw`` must be passed to
    :func:`meta_grad_augmentation` to differentiate this step.
    """
    tau = gumbel.temperature(epoch)
    if draw is None:
        draw = aug_mod.draw_augmentation(np.random.default_rng(seed), a, len(y), gumbel,
                                         np.asarray(inputs).shape[1])
    if gumbel.n_samples == 0:
        loss, g = loss_and_grad(params, feats, y)
        return AugmentedStep(params.with_vector(_theta(params) - lr * g), loss, draw, tau)
    leaves = [Tensor(w, requires_grad=True) for w in params.weights]
    loss = _augmented_loss(params.arch, leaves, a, None, inputs, feats, y, draw, tau)
    g = ParamVector.from_arrays(grad(loss, leaves)).flat
    return AugmentedStep(params.with_vector(_theta(params) - lr * g), loss.item(), draw, tau)


def meta_grad_augmentation(params: ClassifierParams, inputs, feats, y, a: AugmentParams, draw: AugmentationDraw,
                           tau: float, X_val, y_val, lr_look: float, mode: str = "analytic",
                           delta: float = 1e-2) -> np.ndarray:
    """Ascent direction of the validation log-likelihood with respect to the augmenter.

    Uses ``grad_a L_val(theta~(a)) = -lr_look * grad_a [grad_theta L_train(theta, x~(a)) . v]``
    with ``v`` the validation gradient at the lookahead. ``analytic``
    differentiates the gradient graph; ``hvp_fd`` replaces the inner product by
    a central difference of the training loss along ``v``.
    """
    if mode not in META_MODES:
        raise ConfigError(f"meta_mode must be one of {META_MODES}")
    if len(y_val) == 0:
        raise ConfigError("meta-gradient needs a non-empty validation set")
    arch = params.arch
    theta = _theta(params)

    if mode == "analytic":
        t_leaves = [Tensor(w, requires_grad=True) for w in params.weights]
        a_leaves = a.tensors(requires_grad=True)
        loss = _augmented_loss(arch, t_leaves, a, a_leaves, inputs, feats, y, draw, tau)
        g_theta = grad(loss, t_leaves, create_graph=True)
        g_flat = ParamVector.from_arrays(g_theta).flat
        v = _val_grad(params, theta - lr_look * g_flat, X_val, y_val)
        v_parts = ParamVector(v, params.shapes).unflatten()
        inner = dot(g_theta[0], v_parts[0])
        for gk, vk in zip(g_theta[1:], v_parts[1:]):
            inner = inner + dot(gk, vk)
        g_a = grad(inner, a_leaves)
        return lr_look * ParamVector.from_arrays(g_a).flat

    t_leaves = [Tensor(w, requires_grad=True) for w in params.weights]
    train_loss = _augmented_loss(arch, t_leaves, a, None, inputs, feats, y, draw, tau)
    g_flat = ParamVector.from_arrays(grad(train_loss, t_leaves)).flat
    v = _val_grad(params, theta - lr_look * g_flat, X_val, y_val)
    vnorm = float(np.linalg.norm(v))
    if vnorm == 0.0:
        return np.zeros(a.to_vector().dim)
    eps = delta / max(vnorm, 1e-12)
    a_leaves = a.tensors(requires_grad=True)

    def shifted(sign: float) -> Tensor:
        shifted_params = params.with_vector(theta + sign * eps * v)
        consts = [Tensor(w) for w in shifted_params.weights]
        return _augmented_loss(arch, consts, a, a_leaves, inputs, feats, y, draw, tau)

    directional = (shifted(1.0) - shifted(-1.0)) * (1.0 / (2.0 * eps))
    g_a = grad(directional, a_leaves)
    return lr_look * ParamVector.from_arrays(g_a).flat


# --------------------------------------------------------------- manipulation


def phi_step(reward, meta_grads, lr_phi: float, batch_ids=None, decay: float = DEFAULT_DECAY):
    """Apply one manipulation update and return the updated reward."""
    if isinstance(reward, WeightReward):
        if batch_ids is None:
            raise ContractError("weight update needs the batch ids")
        table = apply_weight_update(reward.table, batch_ids, lr_phi * np.asarray(meta_grads), decay)
        return replace(reward, table=table)
    if isinstance(reward, AugmentReward):
        vec = reward.params.to_vector()
        meta = np.asarray(meta_grads, dtype=np.float64).ravel()
        if meta.shape != vec.flat.shape:
            raise ContractError(f"augmenter has {vec.dim} parameters, meta-gradient has {meta.size}")
        return replace(reward, params=reward.params.with_vector(vec.flat + lr_phi * meta))
    raise ContractError(f"no manipulation parameters for reward variant {getattr(reward, 'variant', reward)!r}")


def baseline_proportion_weights(train: Dataset) -> WeightTable:
    """Weights proportional to inverse class frequency (stored as log values)."""
    counts = np.bincount(train.labels, minlength=train.n_classes)
    return WeightTable(train.ids, np.log(1.0 / counts[train.labels]), mode="softmax")


def class_coefficient_summary(table: WeightTable, train: Dataset, batch_size: int, seed, epoch: int = 0) -> dict:
    """Mean batch coefficient per class over minibatches that contain every class."""
    sums = np.zeros(train.n_classes)
    counts = np.zeros(train.n_classes)
    for ids in minibatches(train, batch_size, seed, epoch):
        labels = train.labels[train.positions(ids)]
        if len(np.unique(labels)) < train.n_classes:
            continue
        c = batch_coefficients(table, ids)
        np.add.at(sums, labels, c)
        np.add.at(counts, labels, 1)
    with np.errstate(invalid="ignore"):
        means = sums / counts
    return {int(k): (float(m) if counts[k] else None) for k, m in enumerate(means)}


# ------------------------------------------------------------------ training


def _summary(reward) -> dict:
    if isinstance(reward, WeightReward):
        v = reward.table.values
        return {"phi_mean": float(v.mean()), "phi_std": float(v.std()),
                "phi_min": float(v.min()), "phi_max": float(v.max())}
    if isinstance(reward, AugmentReward):
        return aug_mod.substitution_summary(reward.params)
    return {}


def _check_loss(value: float, last_report):
    if not math.isfinite(value) or value > DIVERGENCE_THRESHOLD:
        raise TrainingDiverged(f"training loss {value} exceeded the divergence guard", last_report)


def train_joint(config: TrainerConfig, splits: Splits, reward=None, params: ClassifierParams | None = None,
                on_epoch=None) -> TrainResult:
    """Alternate manipulation and model updates for ``config.epochs`` epochs.

    ``reward`` selects the scheme: :class:`DeltaReward` (plain maximum
    likelihood), :class:`WeightReward`, :class:`AugmentReward`, or
    :class:`ReestimatedWeighting`. Returns the best-validation checkpoint when
    ``config.select_best`` is set, else the last iterate. ``on_epoch``, if
    given, is called with each epoch's :class:`StepReport`.
    """
    reward = DeltaReward() if reward is None else reward
    train, val, test = splits.train, splits.validation, splits.test
    if params is None:
        params = init_params(config.arch, train.n_features, train.n_classes, config.hidden, seed=config.seed)
    X_val, y_val = val.design_matrix(), val.labels
    X_train_all = train.design_matrix()
    X_test = test.design_matrix() if len(test) else None
    if isinstance(reward, AugmentReward) and reward.gumbel is None:
        reward = replace(reward, gumbel=GumbelConfig())
    learns_phi = isinstance(reward, (WeightReward, AugmentReward)) and not reward.frozen
    if learns_phi and len(val) == 0:
        raise ConfigError("learning a manipulation needs a validation set")

    velocity = np.zeros(params.n_params)
    reports: list = []
    best_key, best = None, (params, reward, 0, 0)
    step = 0

    def take_step(p: ClassifierParams, direction: np.ndarray) -> ClassifierParams:
        nonlocal velocity
        velocity = config.momentum * velocity + direction
        return p.with_vector(_theta(p) - config.lr_theta * velocity)

    try:
        for epoch in range(config.epochs):
            for ids in minibatches(train, config.batch_size, config.seed, epoch):
                if config.max_steps is not None and step >= config.max_steps:
                    break
                rows = train.positions(ids)
                Xb, yb = X_train_all[rows], train.labels[rows]
                rng = np.random.default_rng([int(config.seed), epoch, step, 17])
                params, reward, loss = _iteration(config, params, reward, learns_phi, ids, rows, Xb, yb,
                                                  train, X_val, y_val, epoch, rng, take_step)
                _check_loss(loss, reports[-1] if reports else None)
                step += 1
            report = StepReport(
                epoch=epoch,
                step=step,
                train_loss=mean_nll(params, X_train_all, train.labels),
                val_loss=mean_nll(params, X_val, y_val) if len(val) else float("nan"),
                val_accuracy=accuracy(params, X_val, y_val) if len(val) else float("nan"),
                test_accuracy=accuracy(params, X_test, test.labels) if X_test is not None else None,
                manipulation=_summary(reward),
            )
            _check_loss(report.train_loss, reports[-1] if reports else None)
            reports.append(report)
            if on_epoch is not None:
                on_epoch(report)
            key = (report.val_accuracy, -report.val_loss)
            if best_key is None or key > best_key:
                best_key, best = key, (params, reward, epoch, step)
            if config.max_steps is not None and step >= config.max_steps:
                break
    except NumericOverflowError as exc:
        raise TrainingDiverged(str(exc), reports[-1] if reports else None) from exc

    if config.select_best and len(val):
        final_params, final_reward, best_epoch, best_step = best
    else:
        final_params, final_reward = params, reward
        best_epoch, best_step = reports[-1].epoch, step
    return TrainResult(final_params, final_reward, reports, best_epoch, best_step, step)


def _iteration(config, params, reward, learns_phi, ids, rows, Xb, yb, train, X_val, y_val, epoch, rng, take_step):
    """One minibatch of the alternating scheme; returns (params, reward, batch loss)."""
    look = config.look

    if isinstance(reward, DeltaReward):
        loss, g = loss_and_grad(params, Xb, yb)
        return take_step(params, g), reward, loss

    if isinstance(reward, ReestimatedWeighting):
        G = per_example_grads(params, Xb, yb)
        _, w = baseline_ren_step(params, Xb, yb, X_val, y_val, config.lr_theta, look, G=G)
        loss, _ = loss_and_grad(params, Xb, yb, coefficients=w)
        return take_step(params, w @ G), reward, loss

    if isinstance(reward, WeightReward):
        def update_phi(p, r):
            G_p = per_example_grads(p, Xb, yb)
            for _ in range(config.phi_steps):
                meta = meta_grad_weighting(p, Xb, yb, ids, r.table, X_val, y_val, look, G=G_p)
                r = phi_step(r, meta, config.lr_phi, ids, config.decay)
            return r

        if learns_phi and config.order == "phi_first":
            reward = update_phi(params, reward)
        c = batch_coefficients(reward.table, ids)
        loss, g = loss_and_grad(params, Xb, yb, coefficients=c)
        params = take_step(params, g)
        if learns_phi and config.order == "theta_first":
            reward = update_phi(params, reward)
        return params, reward, loss

    if isinstance(reward, AugmentReward):
        inputs = train.features[rows]
        draw = aug_mod.draw_augmentation(rng, reward.params, len(yb), reward.gumbel,
                                         inputs.shape[1] if train.kind == "token" else None)
        tau = reward.gumbel.temperature(epoch)

        def update_phi(p, r):
            for _ in range(config.phi_steps):
                meta = meta_grad_augmentation(p, inputs, Xb, yb, r.params, draw, tau, X_val, y_val, look,
                                              config.meta_mode, config.hvp_delta)
                r = phi_step(r, meta, config.lr_phi)
            return r

        if learns_phi and config.order == "phi_first" and draw.source.size:
            reward = update_phi(params, reward)
        t_leaves = [Tensor(w, requires_grad=True) for w in params.weights]
        loss_t = _augmented_loss(params.arch, t_leaves, reward.params, None, inputs, Xb, yb, draw, tau)
        g = ParamVector.from_arrays(grad(loss_t, t_leaves)).flat
        params = take_step(params, g)
        if learns_phi and config.order == "theta_first" and draw.source.size:
            reward = update_phi(params, reward)
        return params, reward, loss_t.item()

    raise ContractError(f"unsupported reward {reward!r}")
