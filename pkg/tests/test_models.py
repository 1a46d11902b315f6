import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from learnmanip.errors import ConfigError, DataError, ShapeError
from learnmanip.models import (
    ClassifierParams,
    accuracy,
    forward_logits,
    init_params,
    loss_and_grad,
    mean_nll,
    nll_graph,
    per_example_grads,
    predict,
)
from learnmanip.tensor import Tensor


def numpy_nll(arch, weights, X, y):
    if arch == "logistic":
        z = X @ weights[0] + weights[1]
    else:
        z = np.tanh(X @ weights[0] + weights[1]) @ weights[2] + weights[3]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(y)), y]


def random_params(arch, seed, d=3, C=3, hidden=5):
    rng = np.random.default_rng(seed)
    p = init_params(arch, d, C, hidden, seed=seed)
    return p.with_vector(rng.uniform(-1, 1, size=p.n_params))


@pytest.mark.parametrize("arch", ["logistic", "mlp"])
def test_mean_nll_matches_numpy(arch):
    rng = np.random.default_rng(0)
    p = random_params(arch, 1)
    X = rng.standard_normal((9, 3))
    y = rng.integers(0, 3, 9)
    assert mean_nll(p, X, y) == pytest.approx(numpy_nll(arch, p.weights, X, y).mean(), abs=1e-14)


@pytest.mark.parametrize("arch", ["logistic", "mlp"])
def test_per_example_layerwise_matches_replay(arch):
    rng = np.random.default_rng(2)
    p = random_params(arch, 3)
    X = rng.standard_normal((7, 3))
    y = rng.integers(0, 3, 7)
    np.testing.assert_allclose(per_example_grads(p, X, y, "layerwise"), per_example_grads(p, X, y, "replay"),
                               atol=1e-13)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["logistic", "mlp"]))
def test_weighted_gradient_is_combination_of_per_example(seed, arch):
    rng = np.random.default_rng(seed)
    p = random_params(arch, seed)
    X = rng.standard_normal((6, 3))
    y = rng.integers(0, 3, 6)
    c = rng.dirichlet(np.ones(6))
    loss, g = loss_and_grad(p, X, y, coefficients=c)
    G = per_example_grads(p, X, y)
    np.testing.assert_allclose(g, c @ G, atol=1e-12)
    assert loss == pytest.approx(c @ numpy_nll(arch, p.weights, X, y), abs=1e-12)


def test_predict_breaks_ties_towards_lowest_class():
    p = init_params("logistic", 2, 3, zero=True)
    assert predict(p, np.ones((4, 2))).tolist() == [0, 0, 0, 0]


def test_accuracy_and_logits_shape():
    p = random_params("mlp", 4)
    X = np.random.default_rng(0).standard_normal((5, 3))
    assert forward_logits(p, X).shape == (5, 3)
    y = predict(p, X)
    assert accuracy(p, X, y) == 1.0


def test_bad_label_names_example_id():
    logits = Tensor(np.zeros((2, 2)))
    with pytest.raises(DataError, match="17"):
        nll_graph(logits, [0, 5], ids=[3, 17])


def test_param_shape_validation():
    with pytest.raises(ShapeError):
        ClassifierParams("logistic", [np.zeros((2, 2)), np.zeros(3)], 2, 2)
    with pytest.raises(ConfigError):
        init_params("cnn", 2, 2)


def test_vector_roundtrip_and_determinism():
    a = init_params("mlp", 4, 3, 6, seed=9)
    b = init_params("mlp", 4, 3, 6, seed=9)
    assert np.array_equal(a.to_vector().flat, b.to_vector().flat)
    assert np.all(np.abs(a.to_vector().flat) <= 0.1)
    c = a.with_vector(a.to_vector().flat * 2)
    np.testing.assert_array_equal(c.weights[2], 2 * a.weights[2])
