import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pedxing import tensor as T
from pedxing.exceptions import ContractError, DimensionError, ParameterError
from pedxing.tensor import Rng, Tensor
from pedxing.testing import gradcheck, random_tensor

TOL = 1e-4


def naive_conv2d(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - kh) // stride + 1, (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[ni, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[ni, oi, i, j] = np.sum(patch * w[oi]) + (b[oi] if b is not None else 0)
    return out


def naive_grouped_conv(x, w, stride, pad):
    # groups == channels: each output channel sees only its own input channel
    return np.concatenate([naive_conv2d(x[:, c:c + 1], w[c:c + 1], None, stride, pad)
                           for c in range(x.shape[1])], axis=1)


# ------------------------------------------------------------------ matmul

def test_matmul_identity_and_permutation():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(T.matmul(a, Tensor(np.eye(2))).data, [[1, 2], [3, 4]])
    p = T.matmul(Tensor([[1.0, 0.0], [0.0, 0.0]]), Tensor([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_array_equal(p.data, [[0, 1], [0, 0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\[2, 3\].*\[4, 5\]"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_matmul_gradient_4x3_3x5(rng):
    a, b = random_tensor(rng, (4, 3)), random_tensor(rng, (3, 5))
    errs = gradcheck(lambda a, b: T.matmul(a, b).sum() * 1.0 + (T.matmul(a, b) * T.matmul(a, b)).sum(),
                     [a, b])
    assert max(errs) < 1e-6


@pytest.mark.parametrize("m,k,n", [(1, 1, 1), (2, 3, 4), (5, 2, 3), (3, 7, 2), (6, 4, 6)])
def test_matmul_gradcheck_shapes(rng, m, k, n):
    a, b = random_tensor(rng, (m, k)), random_tensor(rng, (k, n))
    r = rng.normal(size=(m, n))
    assert max(gradcheck(lambda a, b: (T.matmul(a, b) * r).sum(), [a, b])) < TOL


# -------------------------------------------------------------------- conv

def test_conv2d_scalar_kernel():
    x = Tensor(np.ones((1, 1, 3, 3)))
    w = Tensor(np.full((1, 1, 1, 1), 2.0))
    out = T.conv2d(x, w, Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 3), 2.0))


def test_conv2d_same_padding_shape():
    out = T.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), None, 1, 1)
    assert out.shape == (1, 1, 4, 4)


def test_conv2d_kernel_too_large():
    with pytest.raises(DimensionError):
        T.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


def test_conv2d_channel_mismatch():
    with pytest.raises(DimensionError):
        T.conv2d(Tensor(np.ones((1, 2, 5, 5))), Tensor(np.ones((1, 3, 3, 3))))


@pytest.mark.parametrize("shape,o,k,stride,pad", [
    ((1, 1, 5, 5), 1, 3, 1, 0), ((2, 3, 6, 5), 4, 3, 2, 1), ((1, 2, 7, 7), 3, 1, 2, 0),
    ((2, 2, 4, 6), 2, 2, 1, 1), ((1, 4, 9, 8), 2, 3, 3, 2)])
def test_conv2d_matches_naive_loop_and_gradcheck(rng, shape, o, k, stride, pad):
    x = random_tensor(rng, shape)
    w = random_tensor(rng, (o, shape[1], k, k))
    b = random_tensor(rng, (o,))
    out = T.conv2d(x, w, b, stride, pad)
    np.testing.assert_allclose(out.data, naive_conv2d(x.data, w.data, b.data, stride, pad),
                               atol=1e-12)
    r = rng.normal(size=out.shape)
    assert max(gradcheck(lambda x, w, b: (T.conv2d(x, w, b, stride, pad) * r).sum(),
                         [x, w, b])) < 1e-5


def test_depthwise_channel_isolation(rng):
    x = Tensor(rng.normal(size=(1, 2, 5, 5)))
    w = rng.normal(size=(2, 1, 3, 3))
    w[0] = 0
    out = T.depthwise_conv2d(x, Tensor(w), padding=1)
    assert np.all(out.data[:, 0] == 0)
    x2 = x.data.copy()
    x2[:, 0] = 100.0
    np.testing.assert_array_equal(T.depthwise_conv2d(Tensor(x2), Tensor(w), padding=1).data[:, 1],
                                  out.data[:, 1])


def test_depthwise_weight_extent_error():
    with pytest.raises(DimensionError):
        T.depthwise_conv2d(Tensor(np.ones((1, 3, 5, 5))), Tensor(np.ones((2, 1, 3, 3))))


@pytest.mark.parametrize("shape,k,stride,pad", [
    ((1, 1, 4, 4), 3, 1, 0), ((2, 3, 6, 6), 3, 2, 1), ((1, 4, 5, 7), 3, 1, 1),
    ((2, 2, 8, 8), 2, 2, 0), ((1, 5, 6, 5), 1, 1, 0)])
def test_depthwise_matches_grouped_oracle_and_gradcheck(rng, shape, k, stride, pad):
    c = shape[1]
    x, w = random_tensor(rng, shape), random_tensor(rng, (c, 1, k, k))
    out = T.depthwise_conv2d(x, w, None, stride, pad)
    np.testing.assert_allclose(out.data, naive_grouped_conv(x.data, w.data, stride, pad), atol=1e-12)
    r = rng.normal(size=out.shape)
    assert max(gradcheck(lambda x, w: (T.depthwise_conv2d(x, w, None, stride, pad) * r).sum(),
                         [x, w])) < 1e-5


# ------------------------------------------------------------------ linear

def test_linear_identity_and_bias_only():
    out = T.linear(Tensor([[1.0, 1.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
    np.testing.assert_array_equal(out.data, [[1, 1]])
    out = T.linear(Tensor([[0.0, 0.0]]), Tensor([[4.0, 5.0], [6.0, 7.0]]), Tensor([3.0, -1.0]))
    np.testing.assert_array_equal(out.data, [[3, -1]])


def test_linear_mismatch():
    with pytest.raises(DimensionError):
        T.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))), Tensor(np.zeros(4)))


@pytest.mark.parametrize("n,i,o", [(1, 1, 1), (2, 3, 4), (5, 4, 2), (3, 8, 3), (7, 2, 5)])
def test_linear_gradcheck(rng, n, i, o):
    x, w, b = random_tensor(rng, (n, i)), random_tensor(rng, (o, i)), random_tensor(rng, (o,))
    r = rng.normal(size=(n, o))
    assert max(gradcheck(lambda x, w, b: (T.linear(x, w, b) * r).sum(), [x, w, b])) < TOL


# ------------------------------------------------------------- activations

def test_activation_fixed_points():
    assert T.activation(Tensor(0.0), "sigmoid").item() == 0.5
    assert T.activation(Tensor(0.0), "tanh").item() == 0.0
    assert T.activation(Tensor(-2.0), "relu").item() == 0.0
    np.testing.assert_array_equal(T.softmax(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    big = T.softmax(Tensor([[1000.0, 1000.0]])).data
    np.testing.assert_array_equal(big, [[0.5, 0.5]])
    assert np.isfinite(T.sigmoid(Tensor([-1000.0, 1000.0])).data).all()


def test_unknown_activation():
    with pytest.raises(ParameterError):
        T.activation(Tensor(1.0), "gelu")


@pytest.mark.parametrize("kind", ["relu", "sigmoid", "tanh", "softmax"])
@pytest.mark.parametrize("shape", [(3,), (2, 3), (4, 1), (2, 3, 4), (5, 6)])
def test_activation_gradcheck(rng, kind, shape):
    x = random_tensor(rng, shape)
    r = rng.normal(size=shape)
    assert max(gradcheck(lambda x: (T.activation(x, kind) * r).sum(), [x])) < TOL


@pytest.mark.parametrize("shape", [(3,), (2, 3), (4, 1), (2, 3, 4), (5, 6)])
def test_log_softmax_gradcheck(rng, shape):
    x = random_tensor(rng, shape)
    r = rng.normal(size=shape)
    assert max(gradcheck(lambda x: (T.log_softmax(x) * r).sum(), [x])) < TOL


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.integers(1, 4))
def test_softmax_rows_sum_to_one_and_sigmoid_open_interval(values, rows):
    x = Tensor(np.tile(values, (rows, 1)))
    np.testing.assert_allclose(T.softmax(x).data.sum(axis=-1), 1.0, atol=1e-6)
    s = T.sigmoid(x).data
    assert np.all((s > 0) & (s < 1))


# -------------------------------------------------------------- batchnorm

def test_batchnorm_training_standardises():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4000, 3))
    x = (x - x.mean(0)) / x.std(0) * 2.0 + 5.0
    rm, rv = np.zeros(3), np.ones(3)
    out = T.batchnorm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), rm, rv, True)
    np.testing.assert_allclose(out.data.mean(0), 0.0, atol=1e-4)
    np.testing.assert_allclose(out.data.var(0), 1.0, atol=1e-4)
    np.testing.assert_allclose(rm, 0.5, atol=1e-9)  # momentum 0.1 toward 5


def test_batchnorm_zero_gamma_gives_beta():
    x = Tensor(np.random.default_rng(1).normal(size=(6, 4)))
    beta = np.array([1.0, -2.0, 0.5, 3.0])
    out = T.batchnorm(x, Tensor(np.zeros(4)), Tensor(beta), np.zeros(4), np.ones(4), True)
    np.testing.assert_allclose(out.data, np.tile(beta, (6, 1)))


def test_batchnorm_eval_formula():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 3))
    gamma, beta = rng.normal(size=3), rng.normal(size=3)
    rm, rv = rng.normal(size=3), rng.uniform(0.5, 2, size=3)
    out = T.batchnorm(Tensor(x), Tensor(gamma), Tensor(beta), rm.copy(), rv.copy(), False)
    expected = gamma * (x - rm) / np.sqrt(rv + 1e-5) + beta
    np.testing.assert_allclose(out.data, expected, rtol=1e-12)


def test_batchnorm_single_sample_zero_variance_is_finite():
    out = T.batchnorm(Tensor(np.ones((1, 3))), Tensor(np.ones(3)), Tensor(np.zeros(3)),
                      np.zeros(3), np.ones(3), True)
    assert np.isfinite(out.data).all()


@pytest.mark.parametrize("shape", [(4, 3), (2, 5), (7, 1), (2, 3, 4, 4), (3, 2, 3, 5)])
@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_gradcheck(rng, shape, training):
    f = shape[1]
    x = random_tensor(rng, shape)
    g = Tensor(rng.uniform(0.5, 1.5, f), requires_grad=True)
    b = random_tensor(rng, (f,))
    rm, rv = rng.normal(size=f), rng.uniform(0.5, 2, size=f)
    r = rng.normal(size=shape)

    def fn(x, g, b):
        return (T.batchnorm(x, g, b, rm.copy(), rv.copy(), training) * r).sum()
    assert max(gradcheck(fn, [x, g, b])) < TOL


# ---------------------------------------------------------------- dropout

def test_dropout_eval_and_p0_are_identity():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
    assert T.dropout(x, 0.5, False, Rng(0)) is x
    np.testing.assert_array_equal(T.dropout(x, 0.0, True, Rng(0)).data, x.data)


def test_dropout_invalid_p():
    with pytest.raises(ParameterError):
        T.dropout(Tensor([1.0]), 1.0, True, Rng(0))


def test_dropout_monte_carlo():
    x = Tensor(np.full(10**6, 3.0))
    out = T.dropout(x, 0.5, True, Rng(11)).data
    survivors = np.mean(out != 0)
    assert abs(survivors - 0.5) < 0.01
    assert abs(out.mean() - 3.0) < 0.03
    assert set(np.unique(out)) == {0.0, 6.0}


@pytest.mark.parametrize("shape", [(4,), (3, 5), (2, 2, 3), (10, 2), (1, 7)])
def test_dropout_gradcheck(rng, shape):
    x = random_tensor(rng, shape)
    r = rng.normal(size=shape)
    assert max(gradcheck(lambda x: (T.dropout(x, 0.3, True, Rng(5)) * r).sum(), [x])) < TOL


def test_rng_reproducible_masks():
    a = T.dropout(Tensor(np.ones(1000)), 0.5, True, Rng(42)).data
    b = T.dropout(Tensor(np.ones(1000)), 0.5, True, Rng(42)).data
    assert a.tobytes() == b.tobytes()


# ---------------------------------------------------------------- pooling

def test_global_avg_constant():
    out = T.pool(Tensor(np.full((2, 3, 4, 5), 7.0)), "global_avg")
    np.testing.assert_array_equal(out.data, np.full((2, 3), 7.0))


def test_max_pool_enumeration():
    out = T.pool(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), "max", 2, 2)
    np.testing.assert_array_equal(out.data, [[[[4.0]]]])


def test_max_pool_routes_gradient_to_argmax():
    x = Tensor([[[[1.0, 2.0], [3.0, 4.0]]]], requires_grad=True)
    T.max_pool2d(x, 2, 2).sum().backward()
    np.testing.assert_array_equal(x.grad, [[[[0, 0], [0, 1]]]])


def test_max_pool_window_too_large():
    with pytest.raises(DimensionError):
        T.max_pool2d(Tensor(np.ones((1, 1, 2, 2))), 3, 1)


@pytest.mark.parametrize("shape,k,s", [((1, 1, 4, 4), 2, 2), ((2, 3, 7, 7), 3, 2), ((1, 2, 5, 6), 3, 1),
                                       ((2, 1, 9, 9), 3, 2), ((1, 4, 6, 6), 2, 1)])
def test_pool_gradcheck(rng, shape, k, s):
    x = random_tensor(rng, shape)
    out_shape = T.max_pool2d(x, k, s).shape
    r = rng.normal(size=out_shape)
    assert max(gradcheck(lambda x: (T.max_pool2d(x, k, s) * r).sum(), [x])) < TOL
    r2 = rng.normal(size=shape[:2])
    assert max(gradcheck(lambda x: (T.global_avg_pool(x) * r2).sum(), [x])) < TOL


# ------------------------------------------------------- elementwise & misc

@pytest.mark.parametrize("shape_a,shape_b", [((3,), (3,)), ((2, 3), (3,)), ((2, 1), (1, 4)),
                                             ((4, 2), (4, 2)), ((1,), (5,))])
def test_broadcast_arithmetic_gradcheck(rng, shape_a, shape_b):
    a, b = random_tensor(rng, shape_a), Tensor(rng.uniform(1, 2, shape_b), requires_grad=True)
    out_shape = np.broadcast_shapes(shape_a, shape_b)
    r = rng.normal(size=out_shape)
    for fn in (lambda a, b: ((a + b) * r).sum(), lambda a, b: ((a - b) * r).sum(),
               lambda a, b: ((a * b) * r).sum(), lambda a, b: ((a / b) * r).sum()):
        assert max(gradcheck(fn, [a, b])) < TOL


@pytest.mark.parametrize("shape", [(3,), (2, 3), (4, 2, 2), (1, 5), (6, 1)])
def test_unary_and_structural_gradcheck(rng, shape):
    x = Tensor(rng.uniform(0.5, 2.0, shape), requires_grad=True)
    r = rng.normal(size=shape)
    assert max(gradcheck(lambda x: (T.exp(x) * r).sum(), [x])) < TOL
    assert max(gradcheck(lambda x: (T.log(x) * r).sum(), [x])) < TOL
    assert max(gradcheck(lambda x: (T.clip(x, 0.8, 1.7) * r).sum(), [x])) < TOL
    assert max(gradcheck(lambda x: x.mean() * 3.0, [x])) < TOL
    assert max(gradcheck(lambda x: (x.reshape(-1)[::-1] * r.reshape(-1)).sum(), [x])) < TOL
    assert max(gradcheck(lambda x: (x.T * r.T).sum(), [x])) < TOL
    assert max(gradcheck(lambda x: (T.concat([x, x * 2.0], axis=0)
                                    * np.concatenate([r, r])).sum(), [x])) < TOL


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4))
def test_reshape_transpose_round_trip(dims):
    x = Tensor(np.arange(np.prod(dims), dtype=np.float64).reshape(dims))
    axes = tuple(reversed(range(len(dims))))
    back = x.transpose(axes).transpose(axes).reshape(-1).reshape(dims)
    np.testing.assert_array_equal(back.data, x.data)
    assert back.data.size == x.data.size


# --------------------------------------------------------------- backward

def test_backward_linearity_and_square():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, [1, 1, 1])
    y = Tensor([1.0, 2.0], requires_grad=True)
    (y * y).sum().backward()
    np.testing.assert_array_equal(y.grad, [2, 4])


def test_backward_requires_scalar():
    with pytest.raises(ContractError):
        (Tensor([1.0, 2.0], requires_grad=True) * 2.0).backward()


def test_backward_accumulates_exactly_twice(rng):
    w = random_tensor(rng, (3, 4))
    x = Tensor(rng.normal(size=(2, 3)))
    loss = T.tanh(T.matmul(x, w)).sum()
    loss.backward()
    once = w.grad.copy()
    loss.backward()
    np.testing.assert_array_equal(w.grad, 2 * once)


def test_backward_visits_reverse_execution_order():
    a = Tensor([1.0], requires_grad=True)
    b = a * 2.0
    c = b + 1.0
    d = c * b
    assert b._seq < c._seq < d._seq
    d.sum().backward()
    # d = (2a + 1)(2a), dd/da = 8a + 2
    np.testing.assert_array_equal(a.grad, [10.0])


def test_no_grad_records_nothing():
    a = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        b = a * 3.0
    assert not b.requires_grad and b.is_leaf
