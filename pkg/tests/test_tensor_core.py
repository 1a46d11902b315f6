import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from learnmanip.errors import CapabilityError, ContractError, NumericOverflowError, ShapeError
from learnmanip.tensor import (
    ParamVector,
    Primitive,
    Tape,
    Tensor,
    backward,
    clip,
    evaluate_graph,
    exp,
    grad,
    hvp_fd,
    log,
    log_softmax,
    matmul,
    mean,
    pick,
    relu,
    softmax,
    sum_rows,
    take_rows,
    tanh,
    tsum,
    value_and_grad,
)


def central_diff(f, x, h=1e-6):
    """Gradient of scalar numpy function ``f`` at ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8))


# ------------------------------------------------------------ evaluate_graph


def test_matmul_hand_arithmetic():
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.shape == (1, 1)
    assert out.data[0, 0] == 11.0


def test_softmax_uniform():
    np.testing.assert_array_equal(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_log_exp_identity():
    x = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_allclose(log(exp(Tensor(x))).data, x, atol=1e-12)


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError) as info:
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    assert info.value.op == "matmul"
    assert "(2, 3)" in str(info.value)


def test_no_general_broadcasting():
    with pytest.raises(ShapeError):
        Tensor(np.ones((3, 1))) + Tensor(np.ones((3, 4)))
    # row vector over matrix is allowed
    assert (Tensor(np.ones((3, 4))) + Tensor(np.ones(4))).shape == (3, 4)


def test_non_finite_intermediate_raises():
    with pytest.raises(NumericOverflowError):
        log(Tensor([0.0, 1.0]))
    with pytest.raises(NumericOverflowError):
        exp(Tensor([1000.0]))


def test_replay_reproduces_and_rebinds():
    with Tape() as tape:
        x = tape.watch(Tensor([[0.5, -1.0]]))
        w = Tensor([[1.0], [2.0]])
        root = tsum(tanh(matmul(x, w)))
    assert evaluate_graph(tape, {x: x.data}).item() == root.item()
    rebound = evaluate_graph(tape, {x: [[1.0, 1.0]]}).item()
    assert rebound == pytest.approx(np.tanh(3.0), abs=1e-15)


def test_replay_requires_parameter_bindings():
    with Tape() as tape:
        x = tape.watch(Tensor([1.0]))
        tsum(x * x)
    with pytest.raises(ContractError):
        evaluate_graph(tape, {})


def test_tape_topological_order():
    with Tape() as tape:
        x = tape.watch(Tensor(np.ones((2, 2))))
        y = softmax(x @ x)
        tsum(y * y)
    seen = {id(p) for p in tape.params}
    for out, _, inputs, _ in tape.records:
        for t in inputs:
            assert t.is_leaf or id(t) in seen
        seen.add(id(out))


# ------------------------------------------------------------------ backward


def test_square_gradient():
    with Tape() as tape:
        x = tape.watch(Tensor(3.0))
        x * x
    (g,) = backward(tape)
    assert g.item() == 6.0


def test_softmax_dot_gradient_at_uniform_point():
    w = Tensor([0.0, 0.0], requires_grad=True)
    f = tsum(softmax(w) * Tensor([1.0, 0.0]))
    (g,) = grad(f, [w])
    np.testing.assert_allclose(g.data, [0.25, -0.25], atol=1e-15)


def test_non_scalar_root_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        grad(x * x, [x])


def _np_mlp_loss(flat, shapes, X, y):
    arrays, start = [], 0
    for s in shapes:
        n = int(np.prod(s))
        arrays.append(flat[start:start + n].reshape(s))
        start += n
    W1, b1, W2, b2, W3, b3 = arrays
    h = np.tanh(X @ W1 + b1)
    h = np.maximum(h @ W2 + b2, 0.0) + 0.1 * (h @ W2 + b2)
    z = h @ W3 + b3
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(y)), y].mean()


def test_three_layer_mlp_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    shapes = [(3, 5), (5,), (5, 4), (4,), (4, 3), (3,)]
    X = rng.uniform(-2, 2, size=(6, 3))
    y = rng.integers(0, 3, size=6)
    flat = ParamVector.from_arrays([rng.uniform(-1, 1, size=s) for s in shapes])
    leaves = flat.tensors()
    W1, b1, W2, b2, W3, b3 = leaves
    h = tanh(matmul(Tensor(X), W1) + b1)
    pre = matmul(h, W2) + b2
    h = relu(pre) + pre * 0.1
    z = matmul(h, W3) + b3
    loss = mean(-pick(log_softmax(z), index=y))
    assert loss.item() == pytest.approx(_np_mlp_loss(flat.flat, shapes, X, y), abs=1e-14)
    g = ParamVector.from_arrays(grad(loss, leaves)).flat
    fd = central_diff(lambda f: _np_mlp_loss(f, shapes, X, y), flat.flat)
    assert rel_err(g, fd) <= 1e-5


UNARY_CASES = [
    ("exp", lambda t: exp(t), np.exp),
    ("log", lambda t: log(t * t + 0.5), lambda a: np.log(a * a + 0.5)),
    ("tanh", lambda t: tanh(t), np.tanh),
    ("relu", lambda t: relu(t), lambda a: np.maximum(a, 0)),
    ("clip", lambda t: clip(t, lo=-1.0, hi=1.0), lambda a: np.clip(a, -1, 1)),
    ("softmax", lambda t: softmax(t), lambda a: np.exp(a) / np.exp(a).sum(axis=-1, keepdims=True)),
    ("log_softmax", lambda t: log_softmax(t), lambda a: a - np.log(np.exp(a).sum(axis=-1, keepdims=True))),
    ("sum_rows", lambda t: sum_rows(t), lambda a: a.sum(axis=0)),
    ("take_rows", lambda t: take_rows(t, index=[2, 0, 2]), lambda a: a[[2, 0, 2]]),
    ("transpose", lambda t: t.T, lambda a: a.T),
    ("div", lambda t: t / (t * t + 1.0), lambda a: a / (a * a + 1.0)),
]


@pytest.mark.parametrize("name,op,ref", UNARY_CASES, ids=[c[0] for c in UNARY_CASES])
def test_primitive_gradients_match_finite_differences(name, op, ref):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    x0 = rng.uniform(-2, 2, size=(3, 4))
    # keep kinks of relu/clip away from the probe points
    x0 = np.where(np.abs(np.abs(x0) - 1.0) < 0.05, x0 + 0.1, x0)
    x0 = np.where(np.abs(x0) < 0.05, 0.3, x0)
    c = rng.uniform(-1, 1, size=np.shape(ref(x0)))
    x = Tensor(x0, requires_grad=True)
    (g,) = grad(tsum(op(x) * Tensor(c)), [x])
    fd = central_diff(lambda a: float(np.sum(ref(a) * c)), x0)
    assert rel_err(g.data, fd) <= 1e-5


def test_gradient_linearity():
    rng = np.random.default_rng(3)
    x0 = rng.uniform(-2, 2, size=(4, 3))
    x = Tensor(x0, requires_grad=True)
    f = lambda: tsum(softmax(x) * Tensor(np.arange(3.0)))  # noqa: E731
    g_ = lambda: tsum(tanh(x) * tanh(x))  # noqa: E731
    a, b = 1.7, -0.4
    (lhs,) = grad(f() * a + g_() * b, [x])
    (gf,) = grad(f(), [x])
    (gg,) = grad(g_(), [x])
    np.testing.assert_allclose(lhs.data, a * gf.data + b * gg.data, atol=1e-12)


def test_second_order_graph():
    # d/dx of (d/dx x^3) = 6x
    x = Tensor(1.5, requires_grad=True)
    (g,) = grad(x * x * x, [x], create_graph=True)
    (h,) = grad(g, [x])
    assert h.item() == pytest.approx(9.0, abs=1e-12)


def test_capability_error_for_first_order_only_primitive():
    square = Primitive("square_fo", lambda a: a * a, lambda g, out, a: (Tensor(2 * a.data) * g,),
                       second_order=False)
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = tsum(square(x))
    (g,) = grad(y, [x])
    np.testing.assert_array_equal(g.data, [2.0, 4.0])
    with pytest.raises(CapabilityError, match="hvp_fd"):
        grad(y, [x], create_graph=True)


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(11)
        x = Tensor(rng.uniform(-2, 2, size=(5, 4)), requires_grad=True)
        loss = tsum(log_softmax(tanh(x) @ Tensor(rng.uniform(size=(4, 3)))))
        return loss.item(), grad(loss, [x])[0].data

    (a, ga), (b, gb) = run(), run()
    assert a == b
    assert np.array_equal(ga, gb)


# ----------------------------------------------------------------------- hvp


def quadratic(leaves):
    (x,) = leaves
    A = Tensor([[2.0, 0.0], [0.0, 4.0]])
    return tsum(x * matmul(A, x)) * 0.5


def test_hvp_quadratic():
    x = ParamVector(np.array([0.3, -0.7]), [(2, 1)])
    v = ParamVector(np.array([1.0, 1.0]), [(2, 1)])
    np.testing.assert_allclose(hvp_fd(quadratic, x, v).flat, [2.0, 4.0], atol=1e-6)


def test_hvp_zero_direction_exact():
    x = ParamVector(np.array([0.3, -0.7]), [(2, 1)])
    out = hvp_fd(quadratic, x, x.zeros_like())
    assert np.all(out.flat == 0.0)


def test_hvp_zero_dimension_rejected():
    empty = ParamVector(np.zeros(0), [])
    with pytest.raises(ContractError):
        hvp_fd(lambda leaves: Tensor(0.0), empty, empty)


def _mlp_setup(seed=0):
    rng = np.random.default_rng(seed)
    X = Tensor(rng.uniform(-2, 2, size=(7, 3)))
    y = rng.integers(0, 2, size=7)
    shapes = [(3, 4), (4,), (4, 2), (2,)]
    params = ParamVector.from_arrays([rng.uniform(-1, 1, size=s) for s in shapes])

    def loss(leaves):
        W1, b1, W2, b2 = leaves
        z = matmul(tanh(matmul(X, W1) + b1), W2) + b2
        return mean(-pick(log_softmax(z), index=y))

    return loss, params, rng


def test_hvp_matches_dense_hessian():
    loss, params, rng = _mlp_setup()
    v = params.like(rng.standard_normal(params.dim))
    h = 1e-5
    H = np.zeros((params.dim, params.dim))
    for j in range(params.dim):
        e = np.zeros(params.dim)
        e[j] = h
        _, gp = value_and_grad(loss, params + e)
        _, gm = value_and_grad(loss, params - e)
        H[:, j] = (gp.flat - gm.flat) / (2 * h)
    dense = H @ v.flat
    approx = hvp_fd(loss, params, v).flat
    assert np.linalg.norm(approx - dense) / np.linalg.norm(dense) <= 1e-3


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([0.5, 2.0]), st.integers(0, 1000))
def test_hvp_homogeneous(c, seed):
    loss, params, rng = _mlp_setup(seed % 7)
    v = params.like(np.random.default_rng(seed).standard_normal(params.dim))
    base = hvp_fd(loss, params, v).flat
    scaled = hvp_fd(loss, params, v * c).flat
    assert np.linalg.norm(scaled - c * base) <= 1e-3 * np.linalg.norm(c * base)


def test_param_vector_roundtrip():
    rng = np.random.default_rng(5)
    arrays = [rng.standard_normal(s) for s in [(2, 3), (3,), (1, 1), (4,)]]
    pv = ParamVector.from_arrays(arrays)
    assert pv.dim == 6 + 3 + 1 + 4
    for a, b in zip(arrays, pv.unflatten()):
        assert np.array_equal(a, b)
