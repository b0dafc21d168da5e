"""Kernel-predictive output head.

Raw kernels are laid out as [N, T*Kh*Kw, H, W], frame-major, then row
offset, then column offset. Frame index 0 in the layout is the oldest
frame (offset -k).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

DEGENERATE_MASS = 1e-8
NORM_TOL = 1e-5


class KernelConfigError(ValueError):
    pass


@dataclass
class KernelField:
    weights: Tensor
    frames: int
    kh: int
    kw: int
    normalized: bool = False
    fallback: np.ndarray | None = None  # [N, H, W] identity-fallback pixels
    degenerate: np.ndarray | None = None  # [N, H, W] mask_renormalize fallback
    meta: dict = field(default_factory=dict)

    @property
    def taps(self) -> int:
        return self.frames * self.kh * self.kw

    @property
    def radius(self) -> int:
        return self.frames // 2

    @property
    def spatial(self) -> tuple:
        return self.weights.shape[2:]

    def per_frame(self) -> np.ndarray:
        """Per-pixel kernel mass of each frame, [N, T, H, W]."""
        n, _, h, w = self.weights.shape
        return self.weights.data.reshape(n, self.frames, self.kh * self.kw, h, w).sum(axis=2)

    def with_weights(self, weights: Tensor, **kw) -> "KernelField":
        base = dict(frames=self.frames, kh=self.kh, kw=self.kw, normalized=self.normalized,
                    fallback=self.fallback, degenerate=self.degenerate)
        base.update(kw)
        return KernelField(weights, **base)


def tap_index(frames: int, kh: int, kw: int, frame: int, dy: int, dx: int) -> int:
    """Channel of tap (frame, dy, dx); ``frame`` is 0-based, dy/dx are 0..kh-1."""
    return (frame * kh + dy) * kw + dx


def central_tap(frames: int, kh: int, kw: int) -> int:
    return tap_index(frames, kh, kw, frames // 2, kh // 2, kw // 2)


def _as_field(raw, frames, kh, kw) -> KernelField:
    if isinstance(raw, KernelField):
        return raw
    if raw.ndim == 3:
        raw = T.reshape(raw, (1,) + raw.shape)
    if frames is None or kh is None:
        raise ValueError("kernel dims required when passing a raw tensor")
    kw = kh if kw is None else kw
    if raw.shape[1] != frames * kh * kw:
        raise ValueError(f"expected {frames * kh * kw} kernel channels, got {raw.shape[1]}")
    return KernelField(raw, frames, kh, kw)


def default_threshold(taps: int) -> float:
    return 1.0 / (2 * taps)


def threshold_normalize(raw, t: float | None = None, frames=None, kh=None, kw=None) -> KernelField:
    """``max(0, w - t) / sum_j max(0, w_j - t)`` per pixel.

    Pixels where every weight is <= t get the identity kernel (weight 1 on
    the central frame's central tap) and are flagged in ``fallback``; they
    carry no gradient.
    """
    kf = _as_field(raw, frames, kh, kw)
    k = kf.taps
    t = default_threshold(k) if t is None else float(t)
    if not t < 1.0 / k:
        raise KernelConfigError(f"threshold {t} must be below 1/K = {1.0 / k}")
    w = kf.weights
    r = T.relu(w - t)
    s = T.sum_(r, axes=1, keepdims=True)
    fb = s.data[:, 0] <= 0
    fbf = fb[:, None].astype(w.dtype)
    s_safe = s + Tensor(fbf)
    out = r / T.broadcast_to(s_safe, w.shape)
    if fb.any():
        ident = np.zeros(w.shape, dtype=w.dtype)
        ident[:, central_tap(kf.frames, kf.kh, kf.kw)] = fb
        out = out + Tensor(ident)
    return kf.with_weights(out, normalized=True, fallback=fb, degenerate=None)


def softmax_normalize(raw, frames=None, kh=None, kw=None) -> KernelField:
    kf = _as_field(raw, frames, kh, kw)
    out = T.softmax(kf.weights, axis=1)
    n, _, h, w = out.shape
    return kf.with_weights(out, normalized=True, fallback=np.zeros((n, h, w), bool), degenerate=None)


def relu_normalize(raw, frames=None, kh=None, kw=None) -> KernelField:
    return threshold_normalize(raw, 0.0, frames, kh, kw)


def _check_normalized(kf: KernelField):
    if not kf.normalized:
        sums = kf.weights.data.sum(axis=1)
        if not (np.all(kf.weights.data >= -NORM_TOL) and np.allclose(sums, 1, atol=NORM_TOL)):
            raise ValueError("kernels are not normalized")


def valid_taps(frames: int, kh: int, kw: int, h: int, w: int) -> np.ndarray:
    """[K, H, W] mask of taps that land inside the image."""
    ph, pw = kh // 2, kw // 2
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    m = np.zeros((kh, kw, h, w), dtype=bool)
    for dy in range(kh):
        for dx in range(kw):
            yy = ys + dy - ph
            xx = xs + dx - pw
            m[dy, dx] = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
    return np.broadcast_to(m[None], (frames, kh, kw, h, w)).reshape(frames * kh * kw, h, w)


def _tap_dot(k: Tensor, seq: Tensor, kh: int, kw: int) -> Tensor:
    """out[n,c,y,x] = sum over taps of k[n,tap,y,x] * seq[n,tau,c,y+dy,x+dx] (zero padded)."""
    n, t, c, h, w = seq.shape
    ph, pw = kh // 2, kw // 2
    sp = np.pad(seq.data, ((0, 0), (0, 0), (0, 0), (ph, ph), (pw, pw)))
    kd = k.data
    out = np.zeros((n, c, h, w), dtype=np.result_type(kd, sp))
    idx = 0
    for tau in range(t):
        for dy in range(kh):
            for dx in range(kw):
                out += kd[:, idx, None] * sp[:, tau, :, dy:dy + h, dx:dx + w]
                idx += 1

    def bw(g):
        gk = np.zeros_like(kd) if k.requires_grad else None
        gs = np.zeros_like(sp) if seq.requires_grad else None
        i = 0
        for tau in range(t):
            for dy in range(kh):
                for dx in range(kw):
                    if gk is not None:
                        gk[:, i] = np.sum(g * sp[:, tau, :, dy:dy + h, dx:dx + w], axis=1)
                    if gs is not None:
                        gs[:, tau, :, dy:dy + h, dx:dx + w] += kd[:, i, None] * g
                    i += 1
        if gs is not None:
            gs = gs[:, :, :, ph:ph + h, pw:pw + w]
        return gk, gs

    return T._record("tap_dot", out, (k, seq), bw)


def apply_kernels(kf: KernelField, seq: Tensor) -> Tensor:
    """Filter a window of images [N, T, C, H, W] with normalized kernels.

    Taps that fall outside the image are dropped and the remaining weights
    renormalized per pixel. Returns [N, C, H, W].
    """
    _check_normalized(kf)
    if seq.ndim == 4:
        seq = T.reshape(seq, (1,) + seq.shape)
    n, t, c, h, w = seq.shape
    if t != kf.frames:
        raise ValueError(f"kernel has {kf.frames} frames, sequence has {t}")
    if (h, w) != kf.spatial or n != kf.weights.shape[0]:
        raise ValueError(f"kernel field {kf.weights.shape} does not match sequence {seq.shape}")
    k = kf.weights
    valid = valid_taps(kf.frames, kf.kh, kf.kw, h, w)
    if not valid.all():
        k = k * Tensor(np.broadcast_to(valid, k.shape).astype(k.dtype))
    s = T.sum_(k, axes=1, keepdims=True)
    bad = s.data[:, 0] < DEGENERATE_MASS
    if bad.any():
        ident = np.zeros(k.shape, dtype=k.dtype)
        ident[:, central_tap(kf.frames, kf.kh, kf.kw)] = bad
        k = k * Tensor(np.broadcast_to(~bad[:, None], k.shape).astype(k.dtype)) + Tensor(ident)
        s = T.sum_(k, axes=1, keepdims=True)
    if not valid.all() or bad.any():
        k = k / T.broadcast_to(s, k.shape)
    return _tap_dot(k, seq, kf.kh, kf.kw)


def apply_to_aov(kf: KernelField, aov_seq: Tensor) -> Tensor:
    """Reuse RGB kernels on another buffer window [N, T, C', H, W]."""
    if aov_seq.shape[-2:] != kf.spatial:
        raise ValueError(f"AOV spatial size {aov_seq.shape[-2:]} != kernel {kf.spatial}")
    return apply_kernels(kf, aov_seq)


def frame_mask(frames: int, kh: int, kw: int, keep) -> np.ndarray:
    """[K] 0/1 vector selecting taps of the kept frame offsets (-k..k)."""
    r = frames // 2
    m = np.zeros((frames, kh * kw))
    for off in keep:
        if not -r <= off <= r:
            raise ValueError(f"frame offset {off} outside window of radius {r}")
        m[off + r] = 1
    return m.reshape(-1)


def mask_renormalize(kf: KernelField, keep) -> KernelField:
    """Zero the taps of frames outside ``keep`` and renormalize per pixel.

    ``keep`` lists frame offsets relative to the center. Pixels whose kept
    mass is below 1e-8 get uniform weight on the kept frames' central taps
    and are flagged in ``degenerate``.
    """
    keep = sorted(set(int(o) for o in keep))
    if not keep:
        raise ValueError("keep must name at least one frame")
    w = kf.weights
    m = frame_mask(kf.frames, kf.kh, kf.kw, keep).astype(w.dtype)
    km = w * Tensor(np.broadcast_to(m[None, :, None, None], w.shape).astype(w.dtype))
    s = T.sum_(km, axes=1, keepdims=True)
    deg = s.data[:, 0] < DEGENERATE_MASS
    if deg.any():
        km = km * Tensor(np.broadcast_to(~deg[:, None], w.shape).astype(w.dtype))
        s = s + Tensor(deg[:, None].astype(w.dtype))
    out = km / T.broadcast_to(s, w.shape)
    if deg.any():
        r = kf.frames // 2
        u = np.zeros(kf.taps, dtype=w.dtype)
        for off in keep:
            u[tap_index(kf.frames, kf.kh, kf.kw, off + r, kf.kh // 2, kf.kw // 2)] = 1.0 / len(keep)
        fill = u[None, :, None, None] * deg[:, None]
        out = out + Tensor(fill.astype(w.dtype))
    return kf.with_weights(out, normalized=True, degenerate=deg)


def frame_weight_stats(kf: KernelField, pixel_mask: np.ndarray | None = None) -> dict:
    """Mean and max over pixels of each frame's kernel mass."""
    s = kf.per_frame()
    s = np.moveaxis(s, 1, 0).reshape(kf.frames, -1)
    if pixel_mask is not None:
        s = s[:, np.asarray(pixel_mask).reshape(-1)]
    return {"avg": [float(v) for v in s.mean(axis=1)], "max": [float(v) for v in s.max(axis=1)]}


def identity_kernels(n, frames, kh, kw, h, w, dtype=np.float32) -> KernelField:
    k = np.zeros((n, frames * kh * kw, h, w), dtype=dtype)
    k[:, central_tap(frames, kh, kw)] = 1
    return KernelField(Tensor(k), frames, kh, kw, normalized=True,
                       fallback=np.zeros((n, h, w), bool))


def uniform_kernels(n, frames, kh, kw, h, w, dtype=np.float32) -> KernelField:
    k = np.full((n, frames * kh * kw, h, w), 1.0 / (frames * kh * kw), dtype=dtype)
    return KernelField(Tensor(k), frames, kh, kw, normalized=True,
                       fallback=np.zeros((n, h, w), bool))
