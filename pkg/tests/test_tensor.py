import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ravg import tensor as T
from ravg.tensor import ConvLayer, Tensor


def t64(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def conv_oracle(x, w, b):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((n, o, h, wd))
    for ni in range(n):
        for oi in range(o):
            for y in range(h):
                for xx in range(wd):
                    acc = b[oi]
                    for ci in range(c):
                        for dy in range(kh):
                            for dx in range(kw):
                                yy, xs = y + dy - ph, xx + dx - pw
                                if 0 <= yy < h and 0 <= xs < wd:
                                    acc += w[oi, ci, dy, dx] * x[ni, ci, yy, xs]
                    out[ni, oi, y, xx] = acc
    return out


# -- elementwise ------------------------------------------------------------------


def test_add_and_max_examples():
    assert np.array_equal(T.add(t64([1, 2]), t64([3, 4])).data, [4, 6])
    assert np.array_equal(T.maximum(t64([1, 5]), t64([3, 2])).data, [3, 5])
    assert np.array_equal(T.elementwise("max", t64([1, 5]), t64([3, 2])).data, [3, 5])


def test_mul_backward():
    x = t64([1, 2], grad=True)
    T.backward(T.sum_(x * x))
    assert np.array_equal(x.grad, [2, 4])


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        T.add(t64([1, 2]), t64([1, 2, 3]))
    with pytest.raises(ValueError):
        T.mul(t64(np.ones((2, 3))), t64(np.ones(3)))


def test_scalar_broadcast():
    assert np.array_equal((t64([1, 2]) * 3).data, [3, 6])
    assert np.array_equal((t64([1, 2]) + t64([10])).data, [11, 12])


def test_div_guard():
    out = T.div(t64([1.0]), t64([0.0]))
    assert np.isfinite(out.data).all()
    assert out.data[0] == pytest.approx(1e12)


def test_backward_requires_scalar():
    x = t64([1, 2], grad=True)
    with pytest.raises(ValueError):
        T.backward(x * 2)
    T.Tape.clear()


def test_gradients_accumulate_over_reuse():
    x = t64([3.0], grad=True)
    T.backward(T.sum_(x * x + x))
    assert x.grad[0] == pytest.approx(7.0)


# -- reductions --------------------------------------------------------------------


def test_reduce_examples():
    assert T.sum_(t64([1, 2, 3])).data == 6
    assert np.array_equal(T.mean(t64(np.ones((2, 3))), axes=1).data, [1, 1])
    with pytest.raises(ValueError):
        T.sum_(t64(np.ones((2, 3))), axes=2)


def test_max_first_tie_rule():
    x = t64([1, 5, 5], grad=True)
    T.backward(T.reduce("max", x))
    assert np.array_equal(x.grad, [0, 1, 0])
    x = t64([2, 1, 1], grad=True)
    T.backward(T.reduce("min", x))
    assert np.array_equal(x.grad, [0, 1, 0])


def test_max_gradient_away_from_ties():
    rng = np.random.default_rng(0)
    x = t64(rng.standard_normal((3, 4)))
    assert T.grad_check(lambda v: T.reduce("max", v, axes=1), x) < 1e-7


# -- convolution ---------------------------------------------------------------------


def test_conv_1x1_example():
    layer = ConvLayer(1, 1, 1, dtype=np.float64)
    layer.weight.data[:] = 2
    x = t64([[[[1, 2], [3, 4]]]])
    assert np.array_equal(T.conv2d(x, layer).data[0, 0], [[2, 4], [6, 8]])


def test_conv_identity_kernel():
    layer = ConvLayer(1, 1, 3, dtype=np.float64)
    layer.weight.data[:] = 0
    layer.weight.data[0, 0, 1, 1] = 1
    x = t64(np.random.default_rng(1).standard_normal((1, 1, 6, 5)))
    assert np.array_equal(T.conv2d(x, layer).data, x.data)


def test_conv_matches_nested_loop_oracle():
    rng = np.random.default_rng(2)
    layer = ConvLayer(3, 2, 5, rng=rng, dtype=np.float64)
    layer.bias.data[:] = rng.standard_normal(2)
    x = rng.standard_normal((1, 3, 5, 5))
    out = T.conv2d(t64(x), layer).data
    assert np.max(np.abs(out - conv_oracle(x, layer.weight.data, layer.bias.data))) < 1e-6


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 2), c=st.integers(1, 4), o=st.integers(1, 3), h=st.integers(1, 7),
       w=st.integers(1, 7), k=st.sampled_from([1, 3, 5]), seed=st.integers(0, 10_000))
def test_conv_oracle_random_shapes(n, c, o, h, w, k, seed):
    rng = np.random.default_rng(seed)
    layer = ConvLayer(c, o, k, rng=rng, dtype=np.float32)
    layer.bias.data[:] = rng.standard_normal(o).astype(np.float32)
    x = rng.standard_normal((n, c, h, w)).astype(np.float32)
    out = T.conv2d(Tensor(x), layer).data
    ref = conv_oracle(x.astype(np.float64), layer.weight.data.astype(np.float64),
                      layer.bias.data.astype(np.float64))
    assert np.max(np.abs(out - ref)) < 1e-5 * max(1.0, np.abs(ref).max())


def test_conv_channel_mismatch():
    with pytest.raises(ValueError):
        T.conv2d(t64(np.ones((1, 2, 4, 4))), ConvLayer(3, 1, 3, dtype=np.float64))


def test_conv_adjoint():
    rng = np.random.default_rng(3)
    layer = ConvLayer(2, 3, 3, rng=rng, dtype=np.float64)
    x = t64(rng.standard_normal((1, 2, 6, 7)), grad=True)
    y = rng.standard_normal((1, 3, 6, 7))
    out = T.conv2d(x, layer)
    lhs = float(np.sum((out.data - layer.bias.data[None, :, None, None]) * y))
    T.backward(T.sum_(out * Tensor(y)))
    assert lhs == pytest.approx(float(np.sum(x.data * x.grad)), abs=1e-6)


# -- activations ---------------------------------------------------------------------


def test_activation_examples():
    assert np.array_equal(T.relu(t64([-1, 2])).data, [0, 2])
    assert np.allclose(T.activation("softmax_channel", t64([0, 0])).data, [0.5, 0.5])
    assert T.sigmoid(t64([0.0])).data[0] == 0.5
    assert np.allclose(T.leaky_relu(t64([-1, 2])).data, [-0.01, 2])


def test_activation_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        T.activation("relu", t64([np.nan]))


def test_sigmoid_stable_at_extremes():
    out = T.sigmoid(t64([-1000, 1000])).data
    assert np.all(np.isfinite(out)) and out[0] == 0 and out[1] == 1


# -- shape ops ----------------------------------------------------------------------


def test_shape_examples():
    assert np.array_equal(T.concat([t64([1]), t64([2])], axis=0).data, [1, 2])
    x = t64(np.arange(12.0).reshape(3, 4))
    padded = T.pad_zero(x, [(1, 2), (0, 3)])
    assert np.array_equal(T.slice_axis(T.slice_axis(padded, 0, 1, 4), 1, 0, 4).data, x.data)
    frames = [t64(np.ones((3, 4, 4)) * i) for i in range(5)]
    assert T.stack(frames).shape == (5, 3, 4, 4)


def test_slice_out_of_range():
    with pytest.raises(IndexError):
        T.slice_axis(t64(np.ones(4)), 0, 2, 6)


def test_sum_grad_is_ones_and_relu_grad():
    x = t64(np.random.default_rng(4).standard_normal((2, 3, 4)), grad=True)
    T.backward(T.sum_(x))
    assert np.array_equal(x.grad, np.ones((2, 3, 4)))
    y = t64([-1, 1], grad=True)
    T.backward(T.sum_(T.relu(y)))
    assert np.array_equal(y.grad, [0, 1])


# -- gradient checks ----------------------------------------------------------------


GRAD_CASES = {
    "add": lambda x: T.add(x, x * 0.5),
    "sub": lambda x: T.sub(x, T.exp(x)),
    "neg": lambda x: T.neg(x),
    "mul": lambda x: T.mul(x, T.sigmoid(x)),
    "div": lambda x: T.div(x, T.exp(x) + 1.0),
    "maximum": lambda x: T.maximum(x, T.neg(x) * 0.3),
    "minimum": lambda x: T.minimum(x, T.neg(x) * 0.3),
    "power": lambda x: T.power(T.absolute(x) + 0.5, 2.5),
    "exp": lambda x: T.exp(x),
    "log": lambda x: T.log(T.absolute(x) + 0.5),
    "abs": lambda x: T.absolute(x),
    "clamp": lambda x: T.clamp(x, -0.5, 0.5),
    "sum": lambda x: T.sum_(x * x, axes=1),
    "mean": lambda x: T.mean(x * x, axes=(0, 2), keepdims=True),
    "relu": lambda x: T.relu(x),
    "leaky_relu": lambda x: T.leaky_relu(x),
    "sigmoid": lambda x: T.sigmoid(x),
    "softmax": lambda x: T.softmax(x, axis=1) * Tensor(np.arange(60.0).reshape(3, 4, 5)),
    "reshape": lambda x: T.reshape(x, (12, 5)) * Tensor(np.arange(60.0).reshape(12, 5)),
    "transpose": lambda x: T.transpose(x, (2, 0, 1)) * Tensor(np.arange(60.0).reshape(5, 3, 4)),
    "slice": lambda x: T.slice_axis(x, 2, 1, 4) ** 2,
    "take": lambda x: T.take(x, 1, 2) ** 2,
    "pad": lambda x: T.pad_zero(x, [(1, 0), (0, 2), (1, 1)]) ** 2,
    "concat": lambda x: T.concat([x, x * x], axis=0),
    "stack": lambda x: T.stack([x, T.exp(x)], axis=1) ** 2,
    "broadcast": lambda x: T.broadcast_to(T.sum_(x, axes=1, keepdims=True), (3, 4, 5)) ** 2,
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_primitive_gradients(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    x = t64(rng.standard_normal((3, 4, 5)))
    x.data[np.abs(x.data) < 0.05] += 0.2  # keep kinks away
    with T.precision("f64"):
        assert T.grad_check(GRAD_CASES[name], x) < 1e-5


def test_sum_of_squares_gradient():
    x = t64(np.random.default_rng(5).standard_normal(20))
    assert T.grad_check(lambda v: T.sum_(v * v), x) < 1e-7


def test_conv_gradients_all_inputs():
    rng = np.random.default_rng(6)
    layer = ConvLayer(2, 3, 3, rng=rng, dtype=np.float64)
    layer.bias.data[:] = rng.standard_normal(3)
    x = t64(rng.standard_normal((2, 2, 5, 6)))
    f = lambda v: T.sum_(T.relu(T.conv2d(x, layer)))  # noqa: E731
    assert T.grad_check(lambda v: T.conv2d(v, layer), x) < 1e-5
    assert T.grad_check(f, layer.weight) < 1e-5
    assert T.grad_check(f, layer.bias) < 1e-5


def test_grad_check_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        T.grad_check(lambda v: v * np.inf, t64([1.0]))


def test_grad_check_detects_wrong_gradient():
    def bad(v):
        return T._record("bad", v.data ** 2, (v,), lambda g: (g * 3.0,))
    assert T.grad_check(bad, t64([1.0, 2.0])) > 0.1


def test_no_grad_records_nothing():
    x = t64([1.0], grad=True)
    T.Tape.clear()
    with T.no_grad():
        _ = x * x
    assert T.Tape.nodes() == []


def test_deterministic_parameters():
    a = ConvLayer(4, 4, 3, rng=np.random.default_rng(9))
    b = ConvLayer(4, 4, 3, rng=np.random.default_rng(9))
    assert np.array_equal(a.weight.data, b.weight.data)
