import numpy as np
import pytest

from ravg import kernels as K
from ravg import losses
from ravg import tensor as T
from ravg.losses import LossConfig
from ravg.tensor import Tensor


def t(x):
    return Tensor(np.asarray(x, dtype=np.float64))


def test_smape_examples():
    x = t(np.random.default_rng(0).random((3, 4)))
    assert losses.smape(x, x).data == 0
    assert losses.smape(t([1.0]), t([0.0]), 0.01).data == pytest.approx(1 / 1.01)


def test_smape_bounded():
    rng = np.random.default_rng(1)
    x, y = rng.exponential(size=1000), rng.exponential(size=1000)
    v = losses.smape(t(x), t(y)).data
    assert 0 <= v < 1
    with pytest.raises(ValueError):
        losses.smape(t([1.0, 2.0]), t([1.0]))


def test_smape_gradient():
    rng = np.random.default_rng(2)
    x = t(rng.random((3, 5)) + 0.1)
    y = rng.random((3, 5)) + 0.1
    assert T.grad_check(lambda v: losses.smape(v, y), x) < 1e-5


def test_l1_examples():
    assert losses.l1(t([0.0, 2.0]), t([1.0, 1.0])).data == 1
    assert losses.l1(t([3.0]), t([3.0])).data == 0


def window(rng, h=4, w=4):
    return Tensor(rng.random((1, 5, 3, h, w)))


def test_static_scene_every_term_zero():
    ref = np.random.default_rng(3).random((1, 3, 4, 4))
    seq = Tensor(np.repeat(ref[:, None], 5, axis=1))
    raw = Tensor(np.random.default_rng(4).standard_normal((1, 5, 4, 4)))
    kf = K.softmax_normalize(raw, 5, 1, 1)
    total, terms = losses.temporal_loss(kf, seq, ref, LossConfig(global_=1.0), return_terms=True)
    assert total.data == pytest.approx(0, abs=1e-12)
    assert set(terms) == {"center", "pair-2+1", "pair-1+2", "global"}


def box_oracle(img, r=1):
    c, h, w = img.shape
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            ys = slice(max(0, y - r), min(h, y + r + 1))
            xs = slice(max(0, x - r), min(w, x + r + 1))
            out[:, y, x] = img[:, ys, xs].mean(axis=(1, 2))
    return out


def test_uniform_kernel_pair_terms_match_hand_oracle():
    rng = np.random.default_rng(5)
    seq = window(rng)
    ref = rng.random((1, 3, 4, 4))
    kf = K.uniform_kernels(1, 5, 3, 3, 4, 4, np.float64)
    _, terms = losses.temporal_loss(kf, seq, ref, LossConfig(), return_terms=True)
    for (a, b), name in zip([(-2, 1), (-1, 2)], ["pair-2+1", "pair-1+2"]):
        mean = 0.5 * (box_oracle(seq.data[0, a + 2]) + box_oracle(seq.data[0, b + 2]))
        want = np.mean(np.abs(mean - ref[0]) / (np.abs(mean) + np.abs(ref[0]) + 0.01))
        assert terms[name] == pytest.approx(want, rel=1e-12)
    center = box_oracle(seq.data[0, 2])
    want = np.mean(np.abs(center - ref[0]) / (np.abs(center) + np.abs(ref[0]) + 0.01))
    assert terms["center"] == pytest.approx(want, rel=1e-12)


def test_center_only_is_spatial_loss_on_center_kernels():
    rng = np.random.default_rng(6)
    seq, ref = window(rng), rng.random((1, 3, 4, 4))
    kf = K.softmax_normalize(Tensor(rng.standard_normal((1, 45, 4, 4))), 5, 3, 3)
    got = losses.temporal_loss(kf, seq, ref, LossConfig(pair=0)).data
    den = K.apply_kernels(K.mask_renormalize(kf, [0]), seq)
    assert got == losses.spatial_loss(den, ref).data


def test_spatial_config_equals_full_kernel_loss():
    rng = np.random.default_rng(7)
    seq, ref = window(rng), rng.random((1, 3, 4, 4))
    kf = K.softmax_normalize(Tensor(rng.standard_normal((1, 45, 4, 4))), 5, 3, 3)
    got = losses.temporal_loss(kf, seq, ref, LossConfig.spatial()).data
    assert got == losses.spatial_loss(K.apply_kernels(kf, seq), ref).data


def test_temporal_loss_gradient():
    rng = np.random.default_rng(8)
    seq, ref = window(rng), rng.random((1, 3, 4, 4))
    raw = Tensor(rng.standard_normal((1, 45, 4, 4)))
    cfg = LossConfig(global_=0.5)
    # out-of-image taps are renormalized away; hold them constant so their
    # exact-zero gradient is not compared against summation roundoff
    m = K.valid_taps(5, 3, 3, 4, 4)[None].astype(np.float64)
    base = raw.data * (1 - m)

    def f(v):
        kf = K.softmax_normalize(v * Tensor(m) + Tensor(base), 5, 3, 3)
        return losses.temporal_loss(kf, seq, ref, cfg)

    # eps 1e-4: at 1e-6 the difference quotient's roundoff (~1e-10) swamps
    # the smallest true components (~1e-7) of this many-term sum
    assert T.grad_check(f, raw, eps=1e-4) < 1e-4


def test_loss_config_errors():
    with pytest.raises(ValueError):
        LossConfig(base="vgg")
    with pytest.raises(ValueError):
        LossConfig(center=-1)
    with pytest.raises(ValueError):
        losses.pair_subsets(1)
    kf = K.uniform_kernels(1, 5, 1, 1, 4, 4, np.float64)
    with pytest.raises(ValueError):
        losses.temporal_loss(kf, window(np.random.default_rng(0)), np.zeros((1, 3, 4, 4)),
                             LossConfig(center=0, pair=0, global_=0))


def test_three_frame_window_rejected_by_default_terms():
    kf = K.uniform_kernels(1, 3, 1, 1, 4, 4, np.float64)
    seq = Tensor(np.zeros((1, 3, 3, 4, 4)))
    with pytest.raises(ValueError):
        losses.temporal_loss(kf, seq, np.zeros((1, 3, 4, 4)), LossConfig())


# -- metrics ---------------------------------------------------------------------------


def test_psnr_examples():
    x = np.random.default_rng(9).random((3, 8, 8))
    assert losses.psnr(x, x) == float("inf")
    y = np.full((3, 8, 8), 0.5)
    assert losses.psnr(y + 0.1, y) == pytest.approx(20.0)
    assert losses.psnr(np.ones((3, 8, 8)), np.zeros((3, 8, 8))) == pytest.approx(0.0)


def test_psnr_clips():
    y = np.full((1, 4, 4), 0.5)
    assert losses.psnr(y + 10, y) == losses.psnr(np.ones_like(y), y)


def test_ssim_identity_and_noise_monotone():
    rng = np.random.default_rng(10)
    x = rng.random((3, 32, 32)) * 0.5 + 0.25
    assert losses.ssim(x, x) == pytest.approx(1.0)
    vals = [losses.ssim(x + s * rng.standard_normal(x.shape), x) for s in (0.05, 0.1, 0.2)]
    assert vals[0] < 1 and vals[0] > vals[1] > vals[2]


def test_ssim_of_constants():
    a, b = np.zeros((1, 16, 16)), np.ones((1, 16, 16))
    c1 = 0.01 ** 2
    want = (2 * 0 * 1 + c1) / (0 + 1 + c1)
    assert losses.ssim(a, b) == pytest.approx(want, rel=1e-9)


def test_ssim_window_too_small():
    with pytest.raises(ValueError):
        losses.ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))


def test_temporal_variance():
    rng = np.random.default_rng(11)
    same = np.repeat(rng.random((1, 3, 8, 8)), 6, axis=0)
    assert losses.temporal_variance(same) == 0
    noise = rng.standard_normal((8, 64, 64))
    assert losses.temporal_variance(noise) == pytest.approx(1.0, rel=0.1)
    assert losses.temporal_variance(2 * noise) == pytest.approx(4 * losses.temporal_variance(noise))
    with pytest.raises(ValueError):
        losses.temporal_variance(noise[:1])
