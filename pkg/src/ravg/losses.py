"""Training losses and image quality metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from . import kernels as K
from . import tensor as T
from .tensor import Tensor

PSNR_INF = float("inf")


@dataclass
class LossConfig:
    base: str = "smape"
    center: float = 1.0
    pair: float = 1.0
    global_: float = 0.0
    eps: float = 1e-2

    def __post_init__(self):
        if self.base not in ("smape", "l1"):
            raise ValueError(f"unknown base loss {self.base!r}")
        if min(self.center, self.pair, self.global_) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.eps <= 0:
            raise ValueError("smape epsilon must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def spatial(cls, **kw):
        """Only the combined-output term; the plain supervised objective."""
        return cls(center=0.0, pair=0.0, global_=1.0, **kw)


def _const(y, like: Tensor) -> Tensor:
    if isinstance(y, Tensor):
        return y
    return Tensor(np.asarray(y, dtype=like.dtype))


def smape(x: Tensor, y, eps: float = 1e-2) -> Tensor:
    """mean(|x - y| / (|x| + |y| + eps))."""
    y = _const(y, x)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    num = T.absolute(x - y)
    den = T.absolute(x) + T.absolute(y) + eps
    return T.mean(num / den)


def l1(x: Tensor, y) -> Tensor:
    y = _const(y, x)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return T.mean(T.absolute(x - y))


def base_loss(x: Tensor, y, cfg: LossConfig) -> Tensor:
    if cfg.base == "smape":
        return smape(x, y, cfg.eps)
    return l1(x, y)


def pair_subsets(radius: int) -> list[tuple[int, int]]:
    """Frame-offset pairs straddling the center: (-k, k-1) and (-k+1, k)."""
    if radius < 2:
        raise ValueError("the default pair terms need a window of at least 5 frames")
    return [(-radius, radius - 1), (-radius + 1, radius)]


def temporal_loss(kf: K.KernelField, seq: Tensor, ref, cfg: LossConfig,
                  return_terms: bool = False):
    """Sum of base losses of subset reconstructions against the same reference.

    Terms: center frame only, each straddling pair of side frames, and
    (weighted by ``cfg.global_``) the full kernel output. Subset outputs come
    from zeroing the other frames' kernel weights and renormalizing.
    """
    terms: dict[str, Tensor] = {}
    if cfg.center > 0:
        out = K.apply_kernels(K.mask_renormalize(kf, [0]), seq)
        terms["center"] = base_loss(out, ref, cfg) * cfg.center
    if cfg.pair > 0:
        for a, b in pair_subsets(kf.radius):
            out = K.apply_kernels(K.mask_renormalize(kf, [a, b]), seq)
            terms[f"pair{a:+d}{b:+d}"] = base_loss(out, ref, cfg) * cfg.pair
    if cfg.global_ > 0:
        out = K.apply_kernels(kf, seq)
        terms["global"] = base_loss(out, ref, cfg) * cfg.global_
    if not terms:
        raise ValueError("all loss weights are zero")
    names = list(terms)
    total = terms[names[0]]
    for name in names[1:]:
        total = total + terms[name]
    if return_terms:
        return total, {n: float(v.data) for n, v in terms.items()}
    return total


def spatial_loss(denoised: Tensor, ref, cfg: LossConfig | None = None) -> Tensor:
    cfg = cfg or LossConfig()
    return base_loss(denoised, ref, cfg)


# -- metrics (plain numpy) ---------------------------------------------------


def psnr(x, y, peak: float = 1.0) -> float:
    """PSNR in dB after clipping both images to [0, peak]; inf when identical."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0, peak)
    y = np.clip(np.asarray(y, dtype=np.float64), 0, peak)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0:
        return PSNR_INF
    return 10.0 * np.log10(peak * peak / mse)


def _gauss_filter(img: np.ndarray, sigma: float, size: int) -> np.ndarray:
    r = size // 2
    xs = np.arange(-r, r + 1)
    g = np.exp(-(xs ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    return out[r:-r, r:-r]


def ssim(x, y, win: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Mean SSIM over valid windows, averaged over channels; inputs clipped to [0, 1]."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0, data_range)
    y = np.clip(np.asarray(y, dtype=np.float64), 0, data_range)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[None], y[None]
    if min(x.shape[-2:]) < win:
        raise ValueError(f"image {x.shape[-2:]} smaller than the {win}x{win} window")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    vals = []
    for a, b in zip(x, y):
        mu_a = _gauss_filter(a, sigma, win)
        mu_b = _gauss_filter(b, sigma, win)
        saa = _gauss_filter(a * a, sigma, win) - mu_a ** 2
        sbb = _gauss_filter(b * b, sigma, win) - mu_b ** 2
        sab = _gauss_filter(a * b, sigma, win) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
        den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def temporal_variance(frames) -> float:
    """Mean over pixels of the unbiased per-pixel variance across frames."""
    f = np.asarray(frames, dtype=np.float64)
    if f.shape[0] < 2:
        raise ValueError("need at least 2 frames")
    f = f - f[0]  # shift-invariant; makes identical frames exactly 0
    return float(np.mean(np.var(f, axis=0, ddof=1)))
