import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import gradcases
from livenesskit import tensorcore as tc


def naive_conv(x, k, b):
    n, h, w, _ = x.shape
    kh, kw, _, cout = k.shape
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0)))
    out = np.zeros((n, h, w, cout))
    for i in range(h):
        for j in range(w):
            patch = xp[:, i:i + kh, j:j + kw, :]
            out[:, i, j, :] = np.einsum("nabc,abcd->nd", patch, k) + b
    return out


@pytest.mark.parametrize("name", sorted(gradcases.CASES))
def test_gradients_finite_difference(name):
    _, shapes = gradcases.CASES[name]
    assert len(shapes) >= 3
    for i, shape in enumerate(shapes):
        errs = gradcases.run_case(name, shape, seed=i)
        assert max(errs) < 1e-4, (name, shape, errs)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.integers(1, 6), st.integers(1, 3), st.integers(1, 3),
       st.integers(0, 1000))
def test_conv_matches_naive(n, h, w, cin, cout, seed):
    rng = np.random.default_rng(seed)
    x, k, b = rng.normal(size=(n, h, w, cin)), rng.normal(size=(3, 3, cin, cout)), rng.normal(size=cout)
    np.testing.assert_allclose(tc.conv2d(x, k, b).data, naive_conv(x, k, b), atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(tc.ShapeError):
        tc.conv2d(np.zeros((1, 4, 4, 2)), np.zeros((3, 3, 3, 1)), np.zeros(1))
    with pytest.raises(tc.ShapeError):
        tc.conv2d(np.zeros((4, 4, 2)), np.zeros((3, 3, 2, 1)), np.zeros(1))
    with pytest.raises(ValueError):
        tc.conv2d(np.zeros((1, 4, 4, 2)), np.zeros((3, 3, 2, 1)), np.zeros(1), padding="valid")


def test_maxpool_tie_goes_to_first():
    x = tc.Tensor(np.ones((1, 2, 2, 1)), requires_grad=True)
    tc.sum_all(tc.maxpool2(x)).backward()
    assert x.grad[0, :, :, 0].tolist() == [[1.0, 0.0], [0.0, 0.0]]


def test_maxpool_odd_size_rejected():
    with pytest.raises(tc.ShapeError):
        tc.maxpool2(np.zeros((1, 3, 4, 1)))


def test_batchnorm_updates_running_stats():
    x = np.arange(12, dtype=np.float64).reshape(4, 3)
    rm, rv = np.zeros(3), np.ones(3)
    tc.batchnorm(x, np.ones(3), np.zeros(3), rm, rv, True, momentum=0.9)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=0))


def test_batchnorm_inference_uses_running_stats():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    rm, rv = np.array([1.0, 1.0]), np.array([4.0, 1.0])
    out = tc.batchnorm(x, np.ones(2), np.zeros(2), rm.copy(), rv.copy(), False, epsilon=0.0).data
    np.testing.assert_allclose(out, (x - rm) / np.sqrt(rv))


def test_batchnorm_default_constants():
    assert tc.BN_EPSILON == 1e-3 and tc.BN_MOMENTUM == 0.99


def test_dropout_modes():
    x = np.ones((1000,))
    rng = np.random.default_rng(0)
    assert np.array_equal(tc.dropout(x, 0.5, False).data, x)
    y = tc.dropout(x, 0.25, True, rng).data
    assert set(np.unique(y)) <= {0.0, 1 / 0.75}
    assert abs(y.mean() - 1.0) < 0.1
    with pytest.raises(ValueError):
        tc.dropout(x, 1.0, True, rng)
    with pytest.raises(ValueError):
        tc.dropout(x, 0.5, True, None)


def test_dropout_reproducible():
    a = tc.dropout(np.ones(50), 0.5, True, np.random.default_rng(7)).data
    b = tc.dropout(np.ones(50), 0.5, True, np.random.default_rng(7)).data
    assert np.array_equal(a, b)


def test_softmax_rows_sum_to_one_and_stable():
    p = tc.softmax(np.array([[1000.0, 0.0], [-1000.0, -1000.0]])).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    np.testing.assert_allclose(p[1], [0.5, 0.5])


def test_leaky_relu_slope():
    y = tc.leaky_relu(np.array([-10.0, 3.0])).data
    assert y.tolist() == [-2.0, 3.0]


def test_shared_subgraph_gradients_accumulate():
    x = tc.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = tc.add(x, x)
    tc.sum_all(tc.add(y, x)).backward()
    assert x.grad.tolist() == [3.0, 3.0]


def test_tape_order_is_topological_and_deterministic():
    x = tc.Tensor(np.ones(3), requires_grad=True, name="x")
    a = tc.tanh(x)
    b = tc.relu(x)
    out = tc.sum_all(tc.add(a, b))
    t1 = tc.Tape.from_output(out)
    t2 = tc.Tape.from_output(out)
    assert [id(n) for n in t1.nodes] == [id(n) for n in t2.nodes]
    pos = {id(n): i for i, n in enumerate(t1.nodes)}
    for n in t1.nodes:
        for p in n._parents:
            assert pos[id(p)] < pos[id(n)]
    assert t1.leaves == [x]


def test_unused_tracked_leaf_gets_zero_grad():
    x = tc.Tensor(np.ones(2), requires_grad=True)
    w = tc.Tensor(np.ones(2), requires_grad=True)
    # w enters the graph but its contribution is multiplied by an all-zero weighting
    out = tc.add(tc.sum_all(x), tc.weighted_sum(w, np.zeros(2)))
    out.backward()
    assert w.grad.tolist() == [0.0, 0.0]


def test_backward_needs_scalar():
    x = tc.Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(tc.ShapeError):
        tc.tanh(x).backward()


def test_dense_shape_errors():
    with pytest.raises(tc.ShapeError):
        tc.dense(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2))
    with pytest.raises(tc.ShapeError):
        tc.add(np.zeros(2), np.zeros(3))
    with pytest.raises(tc.ShapeError):
        tc.concat_channels(np.zeros((1, 2, 2, 1)), np.zeros((1, 3, 2, 1)))


def test_weights_roundtrip(tmp_path):
    arrays = {"0.kernel": np.arange(6, dtype=np.float32).reshape(2, 3), "1.bias": np.ones(3, np.float64)}
    p = tmp_path / "w.npz"
    tc.save_weights(p, arrays)
    back = tc.load_weights(p)
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype
        np.testing.assert_array_equal(back[k], arrays[k])


def test_weights_foreign_file_rejected(tmp_path):
    p = tmp_path / "x.npz"
    np.savez(p, __meta__=np.array('{"format": "other"}'))
    with pytest.raises(ValueError):
        tc.load_weights(p)
