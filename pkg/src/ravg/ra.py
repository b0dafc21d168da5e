"""Robust average operator and the recurrent RA block."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ConvLayer, Tensor

IDENTITY_BIAS = -2.0


def _extremal_mask(x: np.ndarray, axis: int) -> np.ndarray:
    """True everywhere except the first minimum and the first maximum.

    When every entry along ``axis`` is equal, the first two entries are
    dropped so the remaining count is always n - 2.
    """
    xs = np.moveaxis(x, axis, 0)
    lo = xs.min(axis=0)
    hi = xs.max(axis=0)
    keep = np.ones(xs.shape, dtype=bool)
    got_lo = np.zeros(lo.shape, dtype=bool)
    got_hi = np.zeros(lo.shape, dtype=bool)
    for i in range(xs.shape[0]):
        is_lo = (xs[i] == lo) & ~got_lo
        got_lo |= is_lo
        is_hi = (xs[i] == hi) & ~got_hi & ~is_lo
        got_hi |= is_hi
        keep[i] = ~(is_lo | is_hi)
    return np.moveaxis(keep, 0, axis)


def robust_average(values: Tensor, axis: int = 0) -> Tensor:
    """Mean along ``axis`` after discarding the minimum and the maximum.

    Sums the kept entries in ascending index order. The gradient is
    1/(n-2) on kept entries and 0 on the discarded ones (first occurrence on
    ties).
    """
    axis = axis % values.ndim
    n = values.shape[axis]
    if n < 3:
        raise ValueError(f"robust average needs at least 3 values, got {n}")
    keep = _extremal_mask(values.data, axis)
    x = np.moveaxis(values.data, axis, 0)
    k = np.moveaxis(keep, axis, 0)
    acc = np.zeros(x.shape[1:], dtype=values.dtype)
    for i in range(n):
        acc = acc + np.where(k[i], x[i], 0).astype(values.dtype)
    out = acc / values.dtype.type(n - 2)
    scale = (keep / values.dtype.type(n - 2)).astype(values.dtype)

    def bw(g):
        return (np.expand_dims(g, axis) * scale,)

    return T._record("robust_average", out, (values,), bw)


class RABlock:
    """Learned per-pixel blend of each frame with the robust average of the rest.

    Weight head: 3x3 conv (2C -> C), leaky relu, 1x1 conv (C -> 1), sigmoid.
    The head is shared by all recurrence steps of the block.
    """

    def __init__(self, channels: int, rng: np.random.Generator | None = None,
                 dtype=None, name: str = "ra"):
        rng = rng or np.random.default_rng(0)
        self.channels = channels
        self.conv1 = ConvLayer(2 * channels, channels, 3, rng=rng, dtype=dtype, name=f"{name}.conv1")
        self.conv2 = ConvLayer(channels, 1, 1, rng=rng, dtype=dtype, name=f"{name}.conv2")
        self.conv2.bias.data[:] = IDENTITY_BIAS

    def parameters(self):
        return self.conv1.parameters() + self.conv2.parameters()

    def weight(self, excluded: Tensor, avg: Tensor) -> Tensor:
        h = T.leaky_relu(self.conv1(T.concat([excluded, avg], axis=1)))
        return T.sigmoid(self.conv2(h))

    def __call__(self, seq: list[Tensor]) -> list[Tensor]:
        return ra_block(seq, self)


def ra_step(seq: list[Tensor], excluded: int, block: RABlock, weight_fn=None) -> list[Tensor]:
    """Blend ``seq[excluded]`` toward the robust average of the other frames.

    ``seq`` holds T tensors of shape [N, C, H, W]. ``w`` is the weight on the
    average, so w = 0 leaves the frame untouched. ``weight_fn`` overrides the
    learned head (used by tests).
    """
    t = len(seq)
    if t < 4:
        raise ValueError(f"RA step needs at least 4 frames, got {t}")
    others = [seq[j] for j in range(t) if j != excluded]
    avg = robust_average(T.stack(others, axis=0), axis=0)
    x = seq[excluded]
    w = weight_fn(x, avg) if weight_fn is not None else block.weight(x, avg)
    w = T.broadcast_to(w, x.shape) if isinstance(w, Tensor) else w
    mixed = x + w * (avg - x)
    out = list(seq)
    out[excluded] = mixed
    return out


def ra_block(seq: list[Tensor], block: RABlock, weight_fn=None) -> list[Tensor]:
    """Apply ``ra_step`` for excluded = 0 .. T-1, each step on the previous result."""
    for i in range(len(seq)):
        seq = ra_step(seq, i, block, weight_fn)
    return seq


def mean_block(seq: list[Tensor]) -> list[Tensor]:
    """Plain-mean fallback for T = 3 windows, where the robust average is undefined."""
    t = len(seq)
    out = list(seq)
    for i in range(t):
        others = [out[j] for j in range(t) if j != i]
        out[i] = T.mean(T.stack(others, axis=0), axes=0)
    return out
