import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from gspdr import approximator as A
from gspdr.errors import NumericError, ShapeError


def linear(W, b, output="identity"):
    return A.MLP([np.array(W, dtype=float)], [np.array(b, dtype=float)], output)


def test_forward_zero_net():
    net = A.MLP([np.zeros((3, 4)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)])
    assert np.array_equal(net.forward(np.ones(3)), np.zeros(2))


def test_forward_single_linear_layer():
    assert A.forward(linear([[2.0]], [1.0]), [3.0]).tolist() == [7.0]


def test_forward_shape_error():
    net = A.init_mlp([3, 4, 1], np.random.default_rng(0))
    with pytest.raises(ShapeError):
        net.forward(np.ones(2))
    with pytest.raises(ShapeError):
        A.MLP([np.zeros((3, 4)), np.zeros((5, 1))], [np.zeros(4), np.zeros(1)])


def test_linear_backward_is_outer_product():
    x = np.array([1.5, -2.0, 0.25])
    net = linear(np.ones((3, 2)), np.zeros(2))
    up = np.array([1.0, -3.0])
    grads, gin = A.backward(net, x, up)
    assert np.array_equal(grads[0], np.outer(x, up))
    assert np.array_equal(grads[1], up)
    assert np.array_equal(gin, net.weights[0] @ up)


def test_zero_upstream_gives_zero_grads():
    net = A.init_mlp([4, 8, 3], np.random.default_rng(1), output="tanh")
    grads, gin = A.backward(net, np.ones(4), np.zeros(3))
    assert all(not g.any() for g in grads) and not gin.any()


def test_relu_blocks_negative_preactivation():
    # hidden unit 0 is negative for this input, unit 1 positive
    net = A.MLP([np.array([[-1.0, 1.0]]), np.array([[1.0], [1.0]])],
                [np.zeros(2), np.zeros(1)])
    grads, _ = A.backward(net, np.array([2.0]), np.array([1.0]))
    assert grads[0][0, 0] == 0.0 and grads[2][0, 0] == 0.0
    assert grads[0][0, 1] == 2.0  # input times upstream


def test_backward_shape_error():
    net = A.init_mlp([3, 4, 2], np.random.default_rng(0))
    with pytest.raises(ShapeError):
        A.backward(net, np.ones(3), np.ones(3))


def test_final_scale_init():
    net = A.init_mlp([10, 64, 64, 1], np.random.default_rng(0), final_scale=3e-3)
    assert np.abs(net.weights[-1]).max() <= 3e-3
    assert np.abs(net.weights[0]).max() <= 1 / np.sqrt(10)


# ---------------------------------------------------------------- Adam

def test_adam_zero_gradient_leaves_params():
    p = [np.array([1.0, -2.0])]
    opt = A.AdamState.for_params(p, lr=0.1)
    A.adam_step(p, [np.zeros(2)], opt)
    assert p[0].tolist() == [1.0, -2.0] and opt.step == 1


def test_adam_first_step_is_lr_times_sign():
    # m_hat = g, v_hat = g^2, so the first step is lr * g / (|g| + eps)
    p = [np.array([0.0, 0.0, 0.0])]
    g = np.array([0.5, -4.0, 1e-3])
    opt = A.AdamState.for_params(p, lr=0.01)
    A.adam_step(p, [g], opt)
    expected = -0.01 * g / (np.abs(g) + opt.eps)
    assert np.allclose(p[0], expected, rtol=0, atol=1e-15)
    assert np.allclose(np.abs(p[0]), 0.01, rtol=1e-4)


def test_adam_matches_reference_over_steps():
    rng = np.random.default_rng(4)
    p = [rng.normal(size=(3, 2))]
    ref = p[0].copy()
    opt = A.AdamState.for_params(p, lr=1e-2)
    m = np.zeros_like(ref)
    v = np.zeros_like(ref)
    for t in range(1, 6):
        g = rng.normal(size=ref.shape)
        A.adam_step(p, [g], opt)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 1e-2 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(p[0], ref, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_adam_skips_non_finite(bad):
    p = [np.ones(3)]
    opt = A.AdamState.for_params(p)
    with pytest.raises(NumericError):
        A.adam_step(p, [np.array([0.1, bad, 0.2])], opt)
    assert p[0].tolist() == [1.0, 1.0, 1.0]
    assert opt.step == 0 and not opt.m[0].any()


# ---------------------------------------------------------------- gradient checks

def test_gradient_check_linear_is_exact():
    rng = np.random.default_rng(0)
    net = A.init_mlp([5, 3], rng)
    assert A.gradient_check(net, rng.normal(size=(4, 5)), rng=rng) < 1e-7


@pytest.mark.parametrize("output", ["identity", "tanh", "sigmoid"])
def test_gradient_check_small_nets(output):
    rng = np.random.default_rng(1)
    net = A.init_mlp([4, 7, 5, 2], rng, output=output)
    for _ in range(10):
        assert A.gradient_check(net, rng.normal(size=(3, 4)), rng=rng) < 1e-4


def test_gradient_check_skips_kink():
    # the hidden unit sits exactly at zero pre-activation; a naive check
    # would compare a one-sided derivative against the subgradient
    net = A.MLP([np.array([[1.0]]), np.array([[1.0]])], [np.zeros(1), np.zeros(1)])
    assert A.gradient_check(net, np.array([[0.0]]), upstream=np.array([[1.0]])) < 1e-7


def test_two_head_gradients_and_range():
    rng = np.random.default_rng(2)
    model = A.TwoHeadModel.create(6, rng, hidden=(8, 8))
    X = rng.normal(size=(5, 6))
    assert A.gradient_check_two_head(model, X, rng.normal(size=5), rng.uniform(size=5)) < 1e-4
    r, g = model.forward(X)
    assert r.shape == (5,) and np.all((g > 0) & (g < 1))


@given(hnp.arrays(float, (4, 3), elements=st.floats(-1e6, 1e6)))
@settings(max_examples=100, deadline=None)
def test_discount_head_strictly_inside_unit_interval(X):
    model = A.TwoHeadModel.create(3, np.random.default_rng(0), hidden=(5,))
    _, g = model.forward(X)
    assert np.all(g > 0) and np.all(g < 1)


@given(hnp.arrays(float, (2, 3), elements=st.floats(-10, 10)))
@settings(max_examples=50, deadline=None)
def test_forward_deterministic_and_finite(X):
    net = A.init_mlp([3, 6, 2], np.random.default_rng(3), output="tanh")
    a, b = net.forward(X), net.forward(X)
    assert np.array_equal(a, b) and np.all(np.isfinite(a))


def test_two_head_fits_constants():
    rng = np.random.default_rng(3)
    model = A.TwoHeadModel.create(2, rng, hidden=(16, 16))
    opt = A.AdamState.for_params(model.params(), lr=1e-2)
    X = rng.normal(size=(64, 2))
    for _ in range(400):
        _, grads = model.loss_and_grads(X, np.full(64, -1.5), np.full(64, 0.8))
        A.adam_step(model.params(), grads, opt)
    r, g = model.forward(X)
    assert np.allclose(r, -1.5, atol=0.05) and np.allclose(g, 0.8, atol=0.01)


def test_checkpoint_arrays_round_trip():
    rng = np.random.default_rng(5)
    net = A.init_mlp([3, 4, 2], rng, output="tanh")
    back = A.mlp_from_arrays(A.mlp_to_arrays(net, "a"), "a")
    assert back.output == "tanh"
    assert all(np.array_equal(x, y) for x, y in zip(net.params(), back.params()))
    opt = A.AdamState.for_params(net.params(), lr=0.5)
    opt.step = 7
    o2 = A.adam_from_arrays(A.adam_to_arrays(opt, "o"), "o", len(net.params()))
    assert (o2.lr, o2.step) == (0.5, 7)
