import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import gradcheck, numeric_grad
from hypdis import autodiff as ad
from hypdis import manifold as mf


def P(shape, rng, scale=1.0, shift=0.0):
    return ad.Parameter(rng.normal(size=shape) * scale + shift)


def test_square_derivative():
    x = ad.Parameter(np.array(3.0))
    ad.backward(x * x)
    assert float(x.grad) == pytest.approx(6.0)


def test_tanh_derivative_at_zero():
    x = ad.Parameter(np.array(0.0))
    ad.backward(ad.tanh(x))
    assert float(x.grad) == pytest.approx(1.0)


def test_fan_out_accumulates():
    x = ad.Parameter(np.array(1.7))
    ad.backward(x + x)
    assert float(x.grad) == pytest.approx(2.0)


def test_constant_function_zero_gradient():
    x = ad.Parameter(np.array([1.0, 2.0]))
    value, grads = ad.grad(lambda: ad.sum(ad.Tensor(np.ones(2))) + 0.0 * ad.sum(x), [x])
    assert value == 2.0
    assert np.all(grads[0] == 0.0)


def test_non_scalar_root_rejected():
    x = ad.Parameter(np.ones(3))
    with pytest.raises(ValueError):
        ad.backward(x * 2.0)
    with pytest.raises(TypeError):
        ad.backward(np.ones(1))


UNARY = {
    "exp": (ad.exp, 0.5, 0.0),
    "log": (ad.log, 0.2, 2.0),
    "tanh": (ad.tanh, 1.0, 0.0),
    "artanh": (ad.artanh, 0.3, 0.0),
    "sigmoid": (ad.sigmoid, 1.0, 0.0),
    "softplus": (ad.softplus, 1.0, 0.0),
    "log_sigmoid": (ad.log_sigmoid, 1.0, 0.0),
    "sqrt": (ad.sqrt, 0.2, 2.0),
    "relu": (ad.relu, 1.0, 0.0),
    "leaky_relu": (lambda x: ad.leaky_relu(x, 0.2), 1.0, 0.0),
    "clamp": (lambda x: ad.clamp(x, -0.5, 0.5), 1.0, 0.0),
    "neg": (ad.neg, 1.0, 0.0),
    "power": (lambda x: ad.power(x, 3.0), 1.0, 0.0),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradcheck(name):
    fn, scale, shift = UNARY[name]
    rng = np.random.default_rng(hash(name) % 2**32)
    x = P((4, 3), rng, scale, shift)
    if name in ("relu", "leaky_relu", "clamp"):
        # stay away from kinks
        x.value[np.abs(x.value) < 0.05] = 0.3
        x.value[np.abs(np.abs(x.value) - 0.5) < 0.05] = 0.2
    w = rng.normal(size=(4, 3))
    assert gradcheck(lambda: ad.sum(fn(x) * w), [x]) <= 1e-4


BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / (ad.exp(b) + 1.0),
    "matmul": lambda a, b: ad.matmul(a, ad.transpose(b)),
    "dot": lambda a, b: ad.dot(a, b),
    "concat": lambda a, b: ad.concat([a, b], axis=1),
    "stack": lambda a, b: ad.stack([a, b], axis=0),
    "minimum": lambda a, b: ad.minimum(a, b),
    "where": lambda a, b: ad.where(np.array([[True, False, True]] * 4), a, b),
    "broadcast": lambda a, b: a * ad.sum(b, axis=0, keepdims=True),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradcheck(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    a, b = P((4, 3), rng), P((4, 3), rng)
    out = BINARY[name](a, b)
    w = rng.normal(size=ad._val(out).shape)
    assert gradcheck(lambda: ad.sum(BINARY[name](a, b) * w), [a, b]) <= 1e-4


REDUCE = {
    "sum": lambda x: ad.sum(x, axis=0),
    "mean": lambda x: ad.mean(x, axis=1, keepdims=True),
    "norm": lambda x: ad.norm(x),
    "softmax": lambda x: ad.softmax(x, axis=1),
    "log_softmax": lambda x: ad.log_softmax(x, axis=1),
    "reshape": lambda x: ad.reshape(x, (3, 4)),
    "take": lambda x: x[1:3, ::2],
    "rows": lambda x: ad.rows(x, np.array([[0, 2], [3, 3], [1, 0]])),
    "scatter_rows": lambda x: ad.scatter_rows(x, np.array([4, 0, 2, 5]), 6),
}


@pytest.mark.parametrize("name", sorted(REDUCE))
def test_structural_ops_gradcheck(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    x = P((4, 3), rng)
    out = REDUCE[name](x)
    w = rng.normal(size=ad._val(out).shape)
    assert gradcheck(lambda: ad.sum(REDUCE[name](x) * w), [x]) <= 1e-4


def test_sparse_matmul_gradient():
    rng = np.random.default_rng(0)
    a = sp.random(5, 4, density=0.5, random_state=1, format="csr")
    x = P((4, 3), rng)
    w = rng.normal(size=(5, 3))
    assert gradcheck(lambda: ad.sum(ad.matmul(a, x) * w), [x]) <= 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.2, 3.0))
def test_mobius_add_composite_gradcheck(seed, c):
    rng = np.random.default_rng(seed)
    x = ad.Parameter(rng.normal(size=(3, 4)) * 0.2 / np.sqrt(c))
    y = ad.Parameter(rng.normal(size=(3, 4)) * 0.2 / np.sqrt(c))
    w = rng.normal(size=(3, 4))
    assert gradcheck(lambda: ad.sum(mf.mobius_add(x, y, c) * w), [x, y]) <= 1e-4


def test_shared_subexpression_matches_expanded_tree():
    rng = np.random.default_rng(1)
    x1 = ad.Parameter(rng.normal(size=3))
    s = ad.tanh(x1)
    ad.backward(ad.sum(s * s + s))
    x2 = ad.Parameter(x1.value.copy())
    ad.backward(ad.sum(ad.tanh(x2) * ad.tanh(x2) + ad.tanh(x2)))
    np.testing.assert_allclose(x1.grad, x2.grad, atol=1e-14)


def test_no_grad_and_stop_gradient():
    x = ad.Parameter(np.ones(2))
    with ad.no_grad():
        y = x * 3.0
    assert not y.parents
    z = ad.stop_gradient(x) * x
    ad.backward(ad.sum(z))
    np.testing.assert_allclose(x.grad, np.ones(2))


def test_grad_reverse():
    x = ad.Parameter(np.array([0.5, -1.0]))
    y = ad.grad_reverse(x, 2.0)
    np.testing.assert_array_equal(y.value, x.value)
    ad.backward(ad.sum(y))
    np.testing.assert_allclose(x.grad, [-2.0, -2.0])


def test_check_finite_toggle():
    old = ad.CHECK_FINITE
    try:
        ad.CHECK_FINITE = True
        with pytest.raises(ad.NonFiniteError):
            ad.log(ad.Parameter(np.array([-1.0])))
    finally:
        ad.CHECK_FINITE = old


def test_no_nan_gradients_at_origin():
    v = ad.Parameter(np.zeros((2, 3)))
    c = ad.softplus(ad.Parameter(np.array(0.5)))
    out = ad.sum(mf.logmap0(mf.expmap0(v, c), c))
    ad.backward(out)
    assert np.all(np.isfinite(v.grad))


def test_adam_zero_gradient_keeps_params():
    p = ad.Parameter(np.array([1.0, -2.0]))
    state = {}
    ad.adam_step([p], [np.zeros(2)], state, lr=0.1)
    np.testing.assert_array_equal(p.value, [1.0, -2.0])


def test_adam_first_step_moves_by_lr():
    p = ad.Parameter(np.array(0.0))
    ad.adam_step([p], [np.array(1.0)], {}, lr=0.1)
    assert float(p.value) == pytest.approx(-0.1, abs=1e-6)


def test_adam_state_roundtrip_same_trajectory():
    rng = np.random.default_rng(3)
    target = rng.normal(size=4)

    def run(p, opt, steps):
        for _ in range(steps):
            opt.zero_grad()
            d = p - target
            ad.backward(ad.sum(d * d * d * d))
            opt.step()

    p1 = ad.Parameter(np.zeros(4))
    o1 = ad.Adam([p1], lr=0.05)
    run(p1, o1, 5)
    saved_p, saved_state = p1.value.copy(), o1.state_arrays()
    run(p1, o1, 5)
    p2 = ad.Parameter(saved_p)
    o2 = ad.Adam([p2], lr=0.05)
    o2.load_state_arrays(saved_state)
    run(p2, o2, 5)
    np.testing.assert_array_equal(p1.value, p2.value)


def test_numeric_grad_helper_sanity():
    x = ad.Parameter(np.array([1.0, 2.0]))
    np.testing.assert_allclose(numeric_grad(lambda: ad.sum(x * x), x), [2.0, 4.0], atol=1e-8)
