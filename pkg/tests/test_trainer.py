import numpy as np
import pytest

from learnmanip.augment import GumbelConfig, draw_augmentation, init_augmenter
from learnmanip.data import default_blob_means, gen_blobs, gen_token_task, subsample_imbalanced, subsample_low_data
from learnmanip.errors import ConfigError, ContractError, TrainingDiverged
from learnmanip.models import init_params, loss_and_grad, per_example_grads
from learnmanip.rewards import AugmentReward, DeltaReward, WeightReward, WeightTable
from learnmanip.trainer import (
    ReestimatedWeighting,
    TrainerConfig,
    augmented_theta_step,
    baseline_mle_step,
    baseline_ren_step,
    class_coefficient_summary,
    meta_grad_augmentation,
    meta_grad_weighting,
    phi_step,
    train_joint,
    weighted_theta_step,
)


@pytest.fixture(scope="module")
def blob_splits():
    d = gen_blobs(0, [50, 130], default_blob_means(separation=3.0))
    return subsample_imbalanced(d, 0, 20, 100, n_val_per_class=10, n_test_per_class=20)


@pytest.fixture(scope="module")
def token_splits():
    return subsample_low_data(gen_token_task(0, 12, 5, [40, 40]), 0, 12, 2, 20)


def batch(seed=0, n=8, d=2):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d)), rng.integers(0, 2, n), rng.standard_normal((5, d)), rng.integers(0, 2, 5)


def test_uniform_weighted_step_equals_mle_step():
    X, y, _, _ = batch()
    p = init_params("mlp", 2, 2, 4, seed=1)
    w = WeightTable(np.arange(8))
    a = weighted_theta_step(p, X, y, np.arange(8), w, 0.3).to_vector().flat
    b = baseline_mle_step(p, X, y, 0.3).to_vector().flat
    np.testing.assert_allclose(a, b, atol=1e-15)


def test_linear_mode_meta_gradient_matches_finite_differences():
    X, y, Xv, yv = batch(1)
    p = init_params("mlp", 2, 2, 4, seed=2).with_vector(np.random.default_rng(3).uniform(-1, 1, 22))
    phi = np.array([0.5, 1.0, 1.5, 2.0, 0.7, 0.9, 1.1, 1.3])
    w = WeightTable(np.arange(8), phi, "linear")
    meta = meta_grad_weighting(p, X, y, np.arange(8), w, Xv, yv, 0.5)
    G = per_example_grads(p, X, y)

    def val(ph):
        c = ph / ph.sum()
        return loss_and_grad(p.with_vector(p.to_vector().flat - 0.5 * (c @ G)), Xv, yv)[0]

    h = 1e-6
    fd = np.array([(val(phi + h * e) - val(phi - h * e)) / (2 * h) for e in np.eye(8)])
    np.testing.assert_allclose(meta, -fd, rtol=1e-5, atol=1e-10)


def test_meta_gradient_favours_examples_aligned_with_validation():
    # the validation set is a copy of example 0; example 1 carries the opposite label
    X = np.array([[1.0, 0.0], [1.0, 0.0]])
    y = np.array([0, 1])
    p = init_params("logistic", 2, 2, seed=0)
    meta = meta_grad_weighting(p, X, y, [0, 1], WeightTable([0, 1]), X[:1], y[:1], 0.5)
    assert meta[0] > 0 > meta[1]


def test_ren_weights_are_normalized_rectified_influences():
    X, y, Xv, yv = batch(4)
    p = init_params("logistic", 2, 2, seed=0).with_vector(np.random.default_rng(5).uniform(-1, 1, 6))
    G = per_example_grads(p, X, y)
    _, v = loss_and_grad(p.with_vector(p.to_vector().flat - 0.2 * G.mean(axis=0)), Xv, yv)
    expected = np.maximum(G @ v, 0)
    assert expected.sum() > 0
    _, w = baseline_ren_step(p, X, y, Xv, yv, lr=0.2)
    np.testing.assert_allclose(w, expected / expected.sum(), atol=1e-15)


def test_phi_step_rejects_rewards_without_parameters():
    with pytest.raises(ContractError):
        phi_step(DeltaReward(), np.zeros(2), 0.1)
    with pytest.raises(ContractError):
        phi_step(WeightReward(WeightTable([0, 1])), np.zeros(2), 0.1)


def test_zero_augmentation_samples_is_mle_step():
    d = gen_token_task(1, 12, 5, [6, 6])
    p = init_params("logistic", 12, 2, seed=0)
    a = init_augmenter("token", 2, 12)
    step = augmented_theta_step(p, d.features, d.design_matrix(), d.labels, a, GumbelConfig(n_samples=0), 0.5)
    ref = baseline_mle_step(p, d.design_matrix(), d.labels, 0.5)
    np.testing.assert_array_equal(step.params.to_vector().flat, ref.to_vector().flat)


def test_continuous_augmentation_meta_gradient_modes_agree():
    rng = np.random.default_rng(6)
    X, y = rng.standard_normal((6, 3)), rng.integers(0, 2, 6)
    Xv, yv = rng.standard_normal((4, 3)), rng.integers(0, 2, 4)
    p = init_params("mlp", 3, 2, 5, seed=1).with_vector(rng.uniform(-1, 1, 32))
    a = init_augmenter("continuous", 2, 3, hidden=4, seed=2, bound=2.0)
    a = a.with_vector(rng.uniform(-0.3, 0.3, a.to_vector().dim))
    draw = draw_augmentation(rng, a, 6, GumbelConfig(n_samples=2))
    args = (p, X, X, y, a, draw, 1.0, Xv, yv, 0.5)
    m1 = meta_grad_augmentation(*args, mode="analytic")
    m2 = meta_grad_augmentation(*args, mode="hvp_fd", delta=1e-3)
    assert m1 @ m2 / (np.linalg.norm(m1) * np.linalg.norm(m2)) >= 0.999


def test_learned_weighting_changes_only_weight_entries_of_seen_ids(blob_splits):
    cfg = TrainerConfig(epochs=1, batch_size=16, lr_phi=5.0, arch="logistic", max_steps=1)
    result = train_joint(cfg, blob_splits, WeightReward(WeightTable(blob_splits.train.ids)))
    assert result.steps == 1
    assert 0 < np.count_nonzero(result.reward.table.values) <= 16


@pytest.mark.parametrize("order", ["phi_first", "theta_first"])
def test_training_runs_for_every_reward(blob_splits, token_splits, order):
    cfg = TrainerConfig(epochs=2, batch_size=16, lr_phi=1.0, arch="mlp", hidden=4, order=order)
    for reward in (DeltaReward(), ReestimatedWeighting(), WeightReward(WeightTable(blob_splits.train.ids))):
        r = train_joint(cfg, blob_splits, reward)
        assert len(r.reports) == 2 and r.reports[-1].test_accuracy is not None
    a = AugmentReward(init_augmenter("token", 2, 12), GumbelConfig(n_samples=1))
    r = train_joint(cfg, token_splits, a)
    assert not np.array_equal(r.reward.params.weights[0], a.params.weights[0])


def test_orders_differ(blob_splits):
    runs = [train_joint(TrainerConfig(epochs=1, lr_phi=50.0, arch="logistic", order=o, select_best=False),
                        blob_splits, WeightReward(WeightTable(blob_splits.train.ids)))
            for o in ("phi_first", "theta_first")]
    assert not np.array_equal(runs[0].params.to_vector().flat, runs[1].params.to_vector().flat)


def test_best_checkpoint_is_selected(blob_splits):
    cfg = TrainerConfig(epochs=6, batch_size=8, lr_theta=2.0, arch="logistic", select_best=True)
    r = train_joint(cfg, blob_splits)
    keys = [(rep.val_accuracy, -rep.val_loss) for rep in r.reports]
    assert r.best_epoch == keys.index(max(keys))
    X, y = blob_splits.validation.design_matrix(), blob_splits.validation.labels
    assert loss_and_grad(r.params, X, y)[0] == pytest.approx(r.reports[r.best_epoch].val_loss, abs=1e-12)


def test_divergence_is_reported_with_last_report(blob_splits):
    cfg = TrainerConfig(epochs=5, batch_size=4, lr_theta=1e9, arch="mlp", hidden=4, momentum=0.9)
    with pytest.raises(TrainingDiverged) as info:
        train_joint(cfg, blob_splits)
    assert info.value.last_report is None or info.value.last_report.epoch < 5


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainerConfig(lr_theta=0)
    with pytest.raises(ConfigError):
        TrainerConfig(meta_mode="exact")
    with pytest.raises(ConfigError):
        TrainerConfig(order="both")
    assert TrainerConfig(lr_theta=0.3).look == 0.3


def test_class_coefficient_summary_uses_mixed_batches_only(blob_splits):
    table = WeightTable(blob_splits.train.ids)
    summary = class_coefficient_summary(table, blob_splits.train, 16, 0)
    assert summary[0] == pytest.approx(summary[1])
