import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlforecast.lstm import (
    DenseLayer,
    LSTMLayer,
    Network,
    NetworkArchitecture,
    StaleCacheError,
    backward,
    cell_step,
    finite_difference_gradients,
    forward,
    init_network,
    max_relative_error,
    predict,
    sample_loss_gradients,
)
from tlforecast.numkernel import SeededRng, ShapeError

GOLDEN_SEED42 = -0.5020098623126413


def _net(F, hidden, seed=0):
    return init_network(NetworkArchitecture(F, tuple(hidden)), SeededRng(seed))


def _window(rng, B, F):
    return rng.normal_array(B * F).reshape(B, F)


# cell step


def test_cell_zero_fixed_point():
    layer = LSTMLayer.zeros(3, 4)
    h, c = cell_step(layer, np.array([1.0, -2.0, 5.0]), np.zeros(4), np.zeros(4))
    assert np.all(h == 0.0) and np.all(c == 0.0)


def test_cell_pure_carry():
    layer = LSTMLayer.zeros(2, 1)
    H = 1
    layer.b[H : 2 * H] = 1000.0  # forget gate open
    layer.b[:H] = -1000.0  # input gate shut
    _, c = cell_step(layer, np.array([0.7, -0.4]), np.zeros(1), np.array([0.3]))
    assert abs(c[0] - 0.3) <= 1e-12


def test_cell_shape_error():
    layer = LSTMLayer.zeros(3, 2)
    with pytest.raises(ShapeError):
        cell_step(layer, np.zeros(4), np.zeros(2), np.zeros(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.1, 20.0))
def test_cell_hidden_bounded(seed, scale):
    rng = np.random.default_rng(seed)
    layer = LSTMLayer(rng.normal(size=(8, 3)) * scale, rng.normal(size=(8, 2)) * scale, rng.normal(size=8) * scale)
    h, c = np.zeros(2), np.zeros(2)
    for _ in range(10):
        h, c = cell_step(layer, rng.normal(size=3) * scale, h, c)
        assert np.all(np.abs(h) < 1.0)


# forward


def test_forward_zero_network_predicts_zero():
    net = Network.zeros(NetworkArchitecture(3, (4, 2)))
    p, _ = forward(net, np.random.default_rng(0).normal(size=(5, 3)))
    assert p == 0.0


def test_forward_single_step_matches_cell_step():
    net = _net(3, (4,), seed=7)
    x = np.array([[0.2, -0.5, 0.9]])
    h, _ = cell_step(net.lstm_layers[0], x[0], np.zeros(4), np.zeros(4))
    expected = float(net.head.W[0] @ h + net.head.b[0])
    p, _ = forward(net, x)
    assert abs(p - expected) <= 1e-15


def test_forward_multistep_matches_cell_step_stack():
    net = _net(2, (3, 2), seed=3)
    X = _window(SeededRng(1), 5, 2)
    seq = X
    for layer in net.lstm_layers:
        h = c = np.zeros(layer.hidden_dim)
        out = []
        for x in seq:
            h, c = cell_step(layer, x, h, c)
            out.append(h)
        seq = np.array(out)
    expected = float(net.head.W[0] @ seq[-1] + net.head.b[0])
    assert forward(net, X)[0] == pytest.approx(expected, abs=1e-14)


def test_forward_golden_seed42():
    net = init_network(NetworkArchitecture(4, (5, 3)), SeededRng(42))
    assert forward(net, np.ones((6, 4)))[0] == GOLDEN_SEED42


def test_forward_batch_matches_single():
    net = _net(3, (4, 2), seed=2)
    X = np.random.default_rng(5).normal(size=(7, 4, 3))
    batch, _ = forward(net, X)
    single = np.array([forward(net, x)[0] for x in X])
    np.testing.assert_allclose(batch, single, rtol=0, atol=1e-14)
    np.testing.assert_allclose(predict(net, X, chunk=3), batch, rtol=0, atol=1e-14)


def test_forward_is_pure():
    net = _net(3, (4, 2), seed=2)
    X = np.random.default_rng(5).normal(size=(6, 3))
    assert forward(net, X)[0] == forward(net, X)[0]


def test_forward_feature_mismatch():
    with pytest.raises(ShapeError):
        forward(_net(3, (2,)), np.zeros((4, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32))
def test_gates_and_hidden_bounded(seed):
    rng = np.random.default_rng(seed)
    net = _net(3, (4, 3), seed=seed % 1000)
    for p in net.params():
        for v in p.values():
            v *= 5.0
    _, cache = forward(net, rng.normal(size=(2, 6, 3)) * 10)
    for _, layer_steps in cache.steps:
        for h, c, i, f, o, g, tc in layer_steps:
            for gate in (i, f, o):
                assert np.all((gate >= 0.0) & (gate <= 1.0))
            assert np.all(np.abs(h) < 1.0)


# backward


def test_backward_zero_upstream():
    net = _net(2, (3, 2), seed=1)
    _, cache = forward(net, _window(SeededRng(2), 4, 2))
    for g in backward(net, cache, 0.0):
        for v in g.values():
            assert np.all(v == 0.0)


def test_backward_doubling_is_exact():
    net = _net(2, (3, 2), seed=1)
    _, cache = forward(net, _window(SeededRng(2), 4, 2))
    a = backward(net, cache, 0.37)
    b = backward(net, cache, 0.74)
    for ga, gb in zip(a, b):
        for k in ga:
            assert np.array_equal(2.0 * ga[k], gb[k])


def test_backward_stale_cache():
    net = _net(2, (3,), seed=1)
    _, cache = forward(net, np.zeros((3, 2)))
    net.touch()
    with pytest.raises(StaleCacheError):
        backward(net, cache, 1.0)
    with pytest.raises(StaleCacheError):
        backward(_net(2, (3,), seed=1), cache, 1.0)


def test_batch_gradient_is_sum_of_samples():
    net = _net(2, (3, 2), seed=4)
    X = np.random.default_rng(1).normal(size=(5, 4, 2))
    dp = np.random.default_rng(2).normal(size=5)
    _, cache = forward(net, X)
    total = backward(net, cache, dp)
    acc = None
    for x, d in zip(X, dp):
        _, c1 = forward(net, x)
        g = backward(net, c1, d)
        acc = g if acc is None else [{k: a[k] + b[k] for k in a} for a, b in zip(acc, g)]
    for ga, gb in zip(total, acc):
        for k in ga:
            np.testing.assert_allclose(ga[k], gb[k], rtol=1e-12, atol=1e-14)


# finite differences


def test_small_net_matches_finite_differences():
    rng = SeededRng(11)
    net = _net(2, (3,), seed=11)
    X, y = _window(rng, 3, 2), 0.4
    _, analytic = sample_loss_gradients(net, X, y)
    numeric = finite_difference_gradients(net, X, y, 1e-5)
    assert max_relative_error(analytic, numeric) < 1e-5


@pytest.mark.parametrize("hidden", [(2,), (3, 2), (4, 3, 2)])
def test_stacks_match_finite_differences(hidden):
    rng = SeededRng(len(hidden))
    net = _net(3, hidden, seed=len(hidden))
    X, y = _window(rng, 4, 3), -0.3
    _, analytic = sample_loss_gradients(net, X, y)
    assert max_relative_error(analytic, finite_difference_gradients(net, X, y)) < 1e-5


def test_batch_loss_matches_finite_differences():
    net = _net(2, (3, 2), seed=8)
    X = np.random.default_rng(3).normal(size=(3, 4, 2))
    y = np.array([0.1, -0.2, 0.5])
    _, analytic = sample_loss_gradients(net, X, y)
    assert max_relative_error(analytic, finite_difference_gradients(net, X, y)) < 1e-5


def test_dense_head_closed_form():
    # W = U = 0 makes the top hidden state a constant h, so p = w.h + b
    layer = LSTMLayer.zeros(2, 3)
    layer.b[:] = np.linspace(-1.0, 1.5, 12)
    head = DenseLayer(np.array([[0.3, -0.7, 1.1]]), np.array([0.05]))
    net = Network([layer, head])
    X, y = np.array([[0.5, -1.0], [2.0, 0.1]]), 0.8
    p, cache = forward(net, X)
    h = cache.top_hidden[0]
    numeric = finite_difference_gradients(net, X, y)
    np.testing.assert_allclose(numeric[-1]["W"][0], 2 * (p - y) * h, rtol=0, atol=1e-9)
    assert abs(numeric[-1]["b"][0] - 2 * (p - y)) <= 1e-9


def _fd_error(net, X, y, eps):
    _, analytic = sample_loss_gradients(net, X, y)
    numeric = finite_difference_gradients(net, X, y, eps)
    return sum(
        np.sum((a[k] - b[k]) ** 2) for a, b in zip(analytic, numeric) for k in a
    ) ** 0.5


def test_finite_difference_second_order():
    net = _net(2, (2,), seed=5)
    X, y = _window(SeededRng(6), 3, 2), 0.2
    e1 = _fd_error(net, X, y, 2e-2)
    e2 = _fd_error(net, X, y, 1e-2)
    assert 3.0 < e1 / e2 < 5.0


def test_symmetric_units_get_symmetric_gradients():
    # two hidden units with identical weights and identical head weights
    rng = np.random.default_rng(0)
    H = 2
    W = np.repeat(rng.normal(size=(4, 1, 2)), H, axis=1).reshape(4 * H, 2)
    U = np.repeat(np.repeat(rng.normal(size=(4, 1, 1)), H, axis=1), H, axis=2).reshape(4 * H, H) * 0.5
    b = np.repeat(rng.normal(size=(4, 1)), H, axis=1).reshape(4 * H)
    net = Network([LSTMLayer(W, U, b), DenseLayer(np.array([[0.6, 0.6]]), np.array([0.1]))])
    X = np.array([[1.0, -1.0], [0.5, 0.5], [-1.0, 1.0]])
    for grads in (sample_loss_gradients(net, X, 0.3)[1], finite_difference_gradients(net, X, 0.3)):
        gl = grads[0]
        for name in ("W", "U", "b"):
            g = gl[name].reshape(4, H, -1)
            np.testing.assert_allclose(g[:, 0], g[:, 1], rtol=1e-9, atol=1e-12)
        assert grads[1]["W"][0, 0] == pytest.approx(grads[1]["W"][0, 1], rel=1e-9, abs=1e-12)


def test_finite_difference_rejects_bad_eps():
    with pytest.raises(ValueError):
        finite_difference_gradients(_net(1, (1,)), np.zeros((1, 1)), 0.0, eps=0.0)


def test_finite_difference_leaves_network_untouched():
    net = _net(2, (2,), seed=1)
    before = [{k: v.copy() for k, v in p.items()} for p in net.params()]
    finite_difference_gradients(net, np.ones((2, 2)), 0.0)
    for a, b in zip(before, net.params()):
        for k in a:
            assert np.array_equal(a[k], b[k])


# construction


def test_glorot_forget_bias_and_shapes():
    net = _net(5, (4, 3))
    l0 = net.lstm_layers[0]
    assert l0.W.shape == (16, 5) and l0.U.shape == (16, 4) and l0.b.shape == (16,)
    np.testing.assert_array_equal(l0.b[4:8], 1.0)
    assert np.all(l0.b[:4] == 0.0) and np.all(l0.b[8:] == 0.0)
    assert net.head.W.shape == (1, 3)


def test_init_deterministic():
    a, b = _net(3, (4, 2), seed=9), _net(3, (4, 2), seed=9)
    for pa, pb in zip(a.params(), b.params()):
        for k in pa:
            assert pa[k].tobytes() == pb[k].tobytes()


def test_architecture_validation():
    with pytest.raises(ValueError):
        NetworkArchitecture(0, (2,))
    with pytest.raises(ValueError):
        NetworkArchitecture(2, ())
    with pytest.raises(ValueError):
        NetworkArchitecture(2, (3, 0))


def test_architecture_specs_round_trip():
    arch = NetworkArchitecture(41, (64, 32))
    assert NetworkArchitecture.from_specs(arch.layer_specs()) == arch
