import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ravg import kernels as K
from ravg import tensor as T
from ravg.tensor import Tensor


def dot_oracle(k, seq, kh, kw, keep=None):
    """Nested loops: restricted, boundary-dropped, renormalized dot product."""
    n, taps, h, w = k.shape
    _, t, c, _, _ = seq.shape
    ph, pw = kh // 2, kw // 2
    r = t // 2
    out = np.zeros((n, c, h, w))
    for ni in range(n):
        for y in range(h):
            for x in range(w):
                acc = np.zeros(c)
                mass = 0.0
                for tau in range(t):
                    if keep is not None and tau - r not in keep:
                        continue
                    for dy in range(kh):
                        for dx in range(kw):
                            yy, xx = y + dy - ph, x + dx - pw
                            if 0 <= yy < h and 0 <= xx < w:
                                wt = k[ni, (tau * kh + dy) * kw + dx, y, x]
                                acc += wt * seq[ni, tau, :, yy, xx]
                                mass += wt
                out[ni, :, y, x] = acc / mass
    return out


def inside_only(v, base, keep=range(-2, 3)):
    # Out-of-image taps and dropped frames are renormalized away, so the
    # output does not depend on them at all. Route them through a constant so
    # finite differences see an exact zero there instead of summation roundoff.
    n, k, h, w = v.shape
    m = K.valid_taps(5, 3, 3, h, w) * K.frame_mask(5, 3, 3, keep)[:, None, None]
    m = m[None].astype(v.dtype)
    return v * Tensor(np.broadcast_to(m, v.shape).copy()) + Tensor(base.data * (1 - m))


def random_field(rng, n=1, t=5, kh=3, kw=3, h=6, w=7):
    raw = Tensor(rng.standard_normal((n, t * kh * kw, h, w)))
    return K.softmax_normalize(raw, t, kh, kw)


# -- threshold normalize --------------------------------------------------------------


def test_hand_example():
    raw = Tensor(np.array([0.5, 0.3, 0.125, 0.075]).reshape(1, 4, 1, 1))
    kf = K.threshold_normalize(raw, 1 / 8, frames=1, kh=2, kw=2)
    assert np.allclose(kf.weights.data.ravel(), [0.375 / 0.55, 0.175 / 0.55, 0, 0])
    assert kf.weights.data.ravel()[0] == pytest.approx(0.6818, abs=1e-4)


def test_equal_weights_are_uniform():
    k = 45
    raw = Tensor(np.full((1, k, 2, 2), 1.0 / k))
    for t in (0.0, 0.3 / k, 0.9 / k):
        kf = K.threshold_normalize(raw, t, frames=5, kh=3, kw=3)
        assert np.allclose(kf.weights.data, 1.0 / k)


def test_all_below_threshold_falls_back_to_identity():
    raw = Tensor(np.full((1, 45, 2, 2), -1.0))
    raw.data[0, :, 0, 0] = 0.5
    kf = K.threshold_normalize(raw, frames=5, kh=3, kw=3)
    assert kf.fallback.tolist() == [[[False, True], [True, True]]]
    c = K.central_tap(5, 3, 3)
    assert kf.weights.data[0, c, 1, 1] == 1 and kf.weights.data[0, :, 1, 1].sum() == 1


def test_threshold_must_be_below_one_over_k():
    raw = Tensor(np.ones((1, 45, 1, 1)))
    with pytest.raises(K.KernelConfigError):
        K.threshold_normalize(raw, 1 / 45, frames=5, kh=3, kw=3)


def test_zero_threshold_is_relu_normalize():
    raw = Tensor(np.random.default_rng(0).standard_normal((2, 45, 4, 4)))
    a = K.threshold_normalize(raw, 0.0, frames=5, kh=3, kw=3).weights.data
    r = np.maximum(raw.data, 0)
    assert np.array_equal(a, r / r.sum(axis=1, keepdims=True))
    assert np.array_equal(a, K.relu_normalize(raw, 5, 3, 3).weights.data)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), frac=st.floats(0.0, 0.99))
def test_threshold_output_is_normalized(seed, frac):
    rng = np.random.default_rng(seed)
    raw = Tensor(rng.standard_normal((1, 45, 5, 5)) * 0.1 + 1 / 45)
    kf = K.threshold_normalize(raw, frac / 45, frames=5, kh=3, kw=3)
    w = kf.weights.data
    assert np.all(w >= 0)
    assert np.allclose(w.sum(axis=1), 1, atol=1e-5)


def test_sparsity_on_unit_normal_raw():
    raw = Tensor(np.random.default_rng(1).standard_normal((1, 125, 100, 100)))
    kf = K.threshold_normalize(raw, frames=5, kh=5, kw=5)
    assert np.mean(kf.weights.data == 0) > 0.05


def test_threshold_gradient_off_fallback():
    raw = Tensor(np.random.default_rng(2).standard_normal((1, 45, 3, 3)))
    raw.data[np.abs(raw.data - 1 / 90) < 0.02] += 0.1
    weights = Tensor(np.random.default_rng(3).standard_normal((1, 45, 3, 3)))
    f = lambda v: K.threshold_normalize(v, frames=5, kh=3, kw=3).weights * weights  # noqa: E731
    assert T.grad_check(f, raw) < 1e-4


# -- softmax ------------------------------------------------------------------------


def test_softmax_examples():
    kf = K.softmax_normalize(Tensor(np.zeros((1, 4, 1, 1))), 1, 2, 2)
    assert np.allclose(kf.weights.data, 0.25)
    kf = K.softmax_normalize(Tensor(np.array([np.log(2), 0]).reshape(1, 2, 1, 1)), 2, 1, 1)
    assert np.allclose(kf.weights.data.ravel(), [2 / 3, 1 / 3])
    kf = K.softmax_normalize(Tensor(np.array([-50.0, 50.0]).reshape(1, 2, 1, 1)), 2, 1, 1)
    assert kf.weights.data.min() > 0


# -- apply_kernels ---------------------------------------------------------------


def test_uniform_kernel_on_constant():
    seq = Tensor(np.full((1, 5, 3, 6, 6), 0.7))
    out = K.apply_kernels(K.uniform_kernels(1, 5, 3, 3, 6, 6, np.float64), seq)
    assert np.allclose(out.data, 0.7)


def test_identity_kernel_passthrough():
    seq = Tensor(np.random.default_rng(4).standard_normal((2, 5, 3, 6, 7)))
    out = K.apply_kernels(K.identity_kernels(2, 5, 3, 3, 6, 7, np.float64), seq)
    assert np.array_equal(out.data, seq.data[:, 2])


def test_apply_matches_oracle_9x9():
    rng = np.random.default_rng(5)
    kf = random_field(rng, h=9, w=9)
    seq = rng.standard_normal((1, 5, 3, 9, 9))
    out = K.apply_kernels(kf, Tensor(seq)).data
    assert np.max(np.abs(out - dot_oracle(kf.weights.data, seq, 3, 3))) < 1e-6


def test_apply_rejects_unnormalized():
    kf = K.KernelField(Tensor(np.ones((1, 45, 3, 3))), 5, 3, 3)
    with pytest.raises(ValueError):
        K.apply_kernels(kf, Tensor(np.ones((1, 5, 3, 3, 3))))


def test_apply_rejects_spatial_mismatch():
    kf = K.uniform_kernels(1, 5, 3, 3, 4, 4, np.float64)
    with pytest.raises(ValueError):
        K.apply_kernels(kf, Tensor(np.ones((1, 5, 3, 4, 5))))
    with pytest.raises(ValueError):
        K.apply_to_aov(kf, Tensor(np.ones((1, 5, 1, 5, 4))))


def test_apply_gradients():
    rng = np.random.default_rng(6)
    raw = Tensor(rng.standard_normal((1, 45, 4, 5)))
    seq = Tensor(rng.standard_normal((1, 5, 2, 4, 5)))
    base = Tensor(raw.data.copy())
    f_raw = lambda v: K.apply_kernels(K.softmax_normalize(inside_only(v, base), 5, 3, 3), seq)  # noqa
    assert T.grad_check(f_raw, raw) < 1e-5
    kf = K.softmax_normalize(Tensor(raw.data), 5, 3, 3)
    assert T.grad_check(lambda s: K.apply_kernels(kf, s), seq) < 1e-5


def test_apply_to_aov():
    rng = np.random.default_rng(7)
    kf = random_field(rng)
    rgb = Tensor(rng.standard_normal((1, 5, 3, 6, 7)))
    assert np.array_equal(K.apply_to_aov(kf, rgb).data, K.apply_kernels(kf, rgb).data)
    const = Tensor(np.full((1, 5, 1, 6, 7), 2.5))
    assert np.allclose(K.apply_to_aov(kf, const).data, 2.5)
    aov = rng.standard_normal((1, 5, 2, 6, 7))
    assert np.max(np.abs(K.apply_to_aov(kf, Tensor(aov)).data
                         - dot_oracle(kf.weights.data, aov, 3, 3))) < 1e-6


# -- mask_renormalize -------------------------------------------------------------


def test_mask_uniform_example():
    kf = K.uniform_kernels(1, 5, 3, 3, 4, 4, np.float64)
    out = K.mask_renormalize(kf, [-2, 1])
    per = out.per_frame()[0, :, 0, 0]
    assert np.allclose(per, [0.5, 0, 0, 0.5, 0])


def test_mask_keep_all_is_identity():
    kf = random_field(np.random.default_rng(8))
    out = K.mask_renormalize(kf, range(-2, 3))
    assert np.allclose(out.weights.data, kf.weights.data, atol=1e-15)


def test_mask_degenerate_fallback():
    kf = K.identity_kernels(1, 5, 3, 3, 3, 3, np.float64)
    out = K.mask_renormalize(kf, [-2, 1])
    assert out.degenerate.all()
    w = out.weights.data[0, :, 1, 1]
    assert w[K.tap_index(5, 3, 3, 0, 1, 1)] == 0.5
    assert w[K.tap_index(5, 3, 3, 3, 1, 1)] == 0.5
    assert w.sum() == 1


def test_mask_errors():
    kf = K.uniform_kernels(1, 5, 3, 3, 2, 2)
    with pytest.raises(ValueError):
        K.mask_renormalize(kf, [])
    with pytest.raises(ValueError):
        K.mask_renormalize(kf, [3])


@pytest.mark.parametrize("seed", range(10))
def test_mask_then_apply_matches_restricted_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    kf = random_field(rng, h=5, w=6)
    seq = rng.standard_normal((1, 5, 3, 5, 6))
    keep = sorted(rng.choice(np.arange(-2, 3), size=int(rng.integers(1, 6)), replace=False).tolist())
    out = K.apply_kernels(K.mask_renormalize(kf, keep), Tensor(seq)).data
    assert np.max(np.abs(out - dot_oracle(kf.weights.data, seq, 3, 3, keep))) < 1e-6


def test_mask_gradient():
    rng = np.random.default_rng(9)
    raw = Tensor(rng.standard_normal((1, 45, 4, 4)))
    seq = Tensor(rng.standard_normal((1, 5, 3, 4, 4)))
    base = Tensor(raw.data.copy())
    f = lambda v: K.apply_kernels(  # noqa: E731
        K.mask_renormalize(K.softmax_normalize(inside_only(v, base, [-2, 1]), 5, 3, 3), [-2, 1]), seq)
    assert T.grad_check(f, raw) < 1e-5


# -- stats ---------------------------------------------------------------------------


def test_stats_examples():
    st_u = K.frame_weight_stats(K.uniform_kernels(1, 5, 5, 5, 4, 4, np.float64))
    assert np.allclose(st_u["avg"], 0.2) and np.allclose(st_u["max"], 0.2)
    st_i = K.frame_weight_stats(K.identity_kernels(1, 5, 3, 3, 4, 4))
    assert st_i["avg"] == [0, 0, 1, 0, 0] and st_i["max"] == [0, 0, 1, 0, 0]


def test_stats_average_sums_to_one():
    st_r = K.frame_weight_stats(random_field(np.random.default_rng(10)))
    assert sum(st_r["avg"]) == pytest.approx(1, abs=1e-5)
