import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ontosum import tensor as T
from ontosum.tensor import LstmParams, Tensor

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


def leaf(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


def worst(checks):
    return max(c.rel_error for c in checks)


def test_matmul_fixture():
    out = T.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[5, 6], [7, 8]]))
    np.testing.assert_array_equal(out.data, [[19, 22], [43, 50]])


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
    checks = T.gradient_check(lambda: T.sum(T.matmul(a, b)), {"a": a, "b": b})
    assert worst(checks) < 1e-4


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(T.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_sigmoid_values():
    assert T.sigmoid(Tensor(math.log(3))).data == pytest.approx(0.75, abs=1e-12)
    assert T.sigmoid(Tensor(0.0)).data == 0.5


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e4, 1e4)))
def test_sigmoid_stays_open_unit_interval(x):
    s = T.sigmoid(Tensor(x)).data
    assert np.all(s > 0) and np.all(s < 1)


def test_sigmoid_backward():
    w = leaf(0.0)
    loss = T.mul(T.sigmoid(w), 2.0)
    T.backward(loss)
    assert w.grad == pytest.approx(0.5)


@given(arrays(np.float64, st.integers(1, 12), elements=finite))
def test_softmax_is_distribution(v):
    p = T.softmax(Tensor(v)).data
    assert np.all(p >= 0)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


@given(arrays(np.float64, st.integers(1, 8), elements=finite), finite)
def test_softmax_shift_invariant(v, c):
    np.testing.assert_allclose(T.softmax(Tensor(v)).data, T.softmax(Tensor(v + c)).data, atol=1e-12)


def test_softmax_large_inputs_do_not_overflow():
    p = T.softmax(Tensor([1000.0, 1000.0])).data
    np.testing.assert_allclose(p, [0.5, 0.5])


def test_softmax_empty_raises():
    with pytest.raises(T.DimensionError):
        T.softmax(Tensor(np.zeros(0)))


def test_cross_entropy_values():
    assert T.cross_entropy(Tensor([0.5, 0.5]), 0).data == pytest.approx(math.log(2))
    assert T.cross_entropy(Tensor([1.0, 0.0]), 1).data == pytest.approx(-math.log(T.PROB_FLOOR))
    with pytest.raises(IndexError):
        T.cross_entropy(Tensor([0.5, 0.5]), 2)


def test_cross_entropy_batch_rows():
    out = T.cross_entropy(Tensor([[0.5, 0.5], [0.25, 0.75]]), [1, 1]).data
    np.testing.assert_allclose(out, [math.log(2), -math.log(0.75)])


def test_lstm_step_zero_params():
    p = LstmParams(Tensor(np.zeros((2, 4))), Tensor(np.zeros((1, 4))), Tensor(np.zeros(4)))
    h, c = T.lstm_step(Tensor(np.zeros(2)), Tensor(np.zeros(1)), Tensor(np.ones(1)), p)
    assert c.data[0] == pytest.approx(0.5)
    assert h.data[0] == pytest.approx(0.5 * math.tanh(0.5))
    assert h.data[0] == pytest.approx(0.231059, abs=1e-6)


def test_lstm_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    p = LstmParams(leaf(rng.normal(size=(3, 8))), leaf(rng.normal(size=(2, 8))), leaf(rng.normal(size=8)))
    xs = [leaf(rng.normal(size=(2, 3))) for _ in range(3)]
    masks = [np.array([1.0, 1.0]), np.array([1.0, 1.0]), np.array([1.0, 0.0])]
    params = {**p.tensors(), "x0": xs[0]}
    checks = T.gradient_check(lambda: T.sum(T.stack(T.run_lstm(xs, p, masks))), params)
    assert worst(checks) < 1e-4


def test_lstm_mask_freezes_state():
    rng = np.random.default_rng(4)
    p = LstmParams.init(3, 2, rng, scale=0.5)
    h0, c0 = Tensor(rng.normal(size=(2, 2))), Tensor(rng.normal(size=(2, 2)))
    h, c = T.lstm_step(Tensor(rng.normal(size=(2, 3))), h0, c0, p, np.array([1.0, 0.0]))
    np.testing.assert_array_equal(h.data[1], h0.data[1])
    np.testing.assert_array_equal(c.data[1], c0.data[1])


def test_lstm_shape_validation():
    with pytest.raises(T.DimensionError):
        LstmParams(Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4))), Tensor(np.zeros(4)))


def test_adam_first_step_magnitude():
    for g in (1e-3, 0.5, -7.0):
        p = Tensor(np.array([1.0]))
        state = T.AdamState.for_params([p])
        T.adam_step([p], [np.array([g])], state, lr=0.01)
        expected = 0.01 * abs(g) / (abs(g) + 1e-8)
        assert abs(1.0 - p.data[0]) == pytest.approx(expected, rel=1e-9)


@given(st.floats(-100, 100).filter(lambda g: abs(g) > 1e-6))
@settings(max_examples=30)
def test_adam_two_steps_bounded(g):
    p = Tensor(np.array([0.0]))
    state = T.AdamState.for_params([p])
    prev = 0.0
    for _ in range(2):
        T.adam_step([p], [np.array([g])], state, lr=0.1)
        assert abs(p.data[0] - prev) <= 0.1 + 1e-12
        prev = p.data[0]


def test_adam_rejects_nan_gradient():
    p = Tensor(np.zeros(2))
    with pytest.raises(T.NumericalError, match="w"):
        T.adam_step([p], [np.array([0.0, np.nan])], T.AdamState.for_params([p]), 0.1, names=["w"])


def test_clip_grad_norm():
    out = T.clip_grad_norm([np.array([3.0, 4.0])], 1.0)
    np.testing.assert_allclose(out[0], [0.6, 0.8])


def test_backward_contract():
    with pytest.raises(T.ContractError):
        T.backward(T.add(leaf([1.0, 2.0]), 1.0))
    with pytest.raises(T.ContractError):
        T.backward(Tensor(1.0))


def test_shared_node_accumulates():
    x = leaf(3.0)
    T.backward(T.mul(x, x))
    assert x.grad == pytest.approx(6.0)


def test_no_grad_records_nothing():
    x = leaf(2.0)
    with T.no_grad():
        y = T.mul(x, x)
    assert not y.requires_grad


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_output_raises():
    with pytest.raises(T.NumericalError):
        T.mul(Tensor(1e308), 1e308)


def test_composite_gradients():
    rng = np.random.default_rng(5)
    a, b = leaf(rng.normal(size=(2, 3))), leaf(rng.normal(size=(3,)))

    def loss():
        z = T.softmax(T.tanh(T.add(a, b)), axis=1)
        idx = T.index(T.concat([z, T.expand_dims(b, 0)], axis=0), (slice(0, 2), slice(1, 3)))
        return T.sum(T.cross_entropy(T.softmax(idx, axis=1), [0, 1]))

    assert worst(T.gradient_check(loss, {"a": a, "b": b})) < 1e-6


def test_scatter_add_and_pad():
    src = leaf([[0.2, 0.3, 0.5]])
    out = T.scatter_add(src, np.array([[4, 1, 4]]), 6)
    np.testing.assert_allclose(out.data, [[0, 0.3, 0, 0, 0.7, 0]])
    checks = T.gradient_check(lambda: T.sum(T.mul(T.pad_last(T.scatter_add(src, np.array([[4, 1, 4]]), 6), 2), np.arange(8.0))), {"s": src})
    assert worst(checks) < 1e-8


def test_dropout_inverted_scaling():
    rng = np.random.default_rng(0)
    x = Tensor(np.ones(10000))
    y = T.dropout(x, 0.2, rng, training=True).data
    assert set(np.unique(y)) <= {0.0, 1.25}
    assert y.mean() == pytest.approx(1.0, abs=0.05)
    assert T.dropout(x, 0.2, rng, training=False) is x


def test_precision_switch():
    T.set_precision("fp32")
    assert Tensor(1.0).data.dtype == np.float32
    T.set_precision("fp64")
    with pytest.raises(T.ContractError):
        T.set_precision("fp16")


@given(arrays(np.float64, st.integers(1, 8), elements=finite), st.randoms(use_true_random=False))
def test_softmax_permutation_equivariant(v, rnd):
    perm = list(range(len(v)))
    rnd.shuffle(perm)
    np.testing.assert_allclose(T.softmax(Tensor(v[perm])).data, T.softmax(Tensor(v)).data[perm], atol=1e-15)


@given(arrays(np.float64, st.integers(1, 10), elements=st.floats(-1e3, 1e3)))
def test_tanh_range(x):
    t = T.tanh(Tensor(x)).data
    assert np.all(np.abs(t) <= 1)


def test_graph_reuse_doubles_gradient():
    rng = np.random.default_rng(6)
    w = leaf(rng.normal(size=(3, 2)))
    x = Tensor(rng.normal(size=(4, 3)))

    def f():
        return T.sum(T.tanh(T.matmul(x, w)))

    T.backward(f())
    single = w.grad.copy()
    w.grad = None
    T.backward(T.add(f(), f()))
    np.testing.assert_allclose(w.grad, 2 * single, rtol=1e-14)
