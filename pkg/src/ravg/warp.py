"""Motion-compensated alignment of side frames to the central frame."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

SIGMA_ALBEDO = 0.1
SIGMA_NORMAL = 0.2


def _bilinear_taps(flow: np.ndarray):
    _, h, w = flow.shape
    ys, xs = np.mgrid[0:h, 0:w]
    sx = xs + flow[0]
    sy = ys + flow[1]
    oob = (sx < 0) | (sx > w - 1) | (sy < 0) | (sy > h - 1) | ~np.isfinite(sx) | ~np.isfinite(sy)
    sx = np.where(oob, 0.0, sx)
    sy = np.where(oob, 0.0, sy)
    x0 = np.minimum(np.floor(sx).astype(np.int64), w - 1)
    y0 = np.minimum(np.floor(sy).astype(np.int64), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    keep = ~oob
    taps = [
        (y0, x0, (1 - fx) * (1 - fy) * keep),
        (y0, x1, fx * (1 - fy) * keep),
        (y1, x0, (1 - fx) * fy * keep),
        (y1, x1, fx * fy * keep),
    ]
    return taps, oob


def warp_array(image: np.ndarray, flow: np.ndarray):
    """Bilinear backward warp of a [C,H,W] array; returns (warped, oob_mask)."""
    if image.ndim != 3 or flow.shape != (2,) + image.shape[1:]:
        raise ValueError(f"flow {flow.shape} does not match image {image.shape}")
    taps, oob = _bilinear_taps(np.asarray(flow, dtype=np.float64))
    out = np.zeros(image.shape, dtype=np.float64)
    for yy, xx, wt in taps:
        out += image[:, yy, xx] * wt
    return out.astype(image.dtype), oob


def backward_warp(image: Tensor, flow: np.ndarray):
    """Differentiable (in ``image``) bilinear backward warp.

    ``output[p] = image(p + flow[p])``; samples falling outside the image are
    zero and flagged in the returned mask. Flow is a constant input.
    """
    flow = np.asarray(flow.data if isinstance(flow, Tensor) else flow, dtype=np.float64)
    if image.ndim != 3 or flow.shape != (2,) + image.shape[1:]:
        raise ValueError(f"flow {flow.shape} does not match image {image.shape}")
    taps, oob = _bilinear_taps(flow)
    c, h, w = image.shape
    out = np.zeros(image.shape, dtype=np.float64)
    for yy, xx, wt in taps:
        out += image.data[:, yy, xx] * wt

    def bw(g):
        gi = np.zeros((c, h * w), dtype=np.float64)
        for yy, xx, wt in taps:
            flat = (yy * w + xx).reshape(-1)
            vals = (g * wt).reshape(c, -1)
            for ch in range(c):
                gi[ch] += np.bincount(flat, weights=vals[ch], minlength=h * w)
        return (gi.reshape(c, h, w).astype(image.dtype),)

    return T._record("warp", out.astype(image.dtype), (image,), bw), oob


def warp_confidence(warped_albedo, warped_normal, center_albedo, center_normal, oob_mask,
                    sigma_a: float = SIGMA_ALBEDO, sigma_n: float = SIGMA_NORMAL) -> np.ndarray:
    """Per-pixel trust in a warped side frame, from AOV agreement with the center.

    ``exp(-|A'-A0|_1 / (3 sigma_a)) * exp(-(1 - <N',N0>) / sigma_n)``, forced
    to 0 where the warp sampled outside the image.
    """
    da = np.abs(np.asarray(warped_albedo) - np.asarray(center_albedo)).sum(axis=0)
    dot = (np.asarray(warped_normal) * np.asarray(center_normal)).sum(axis=0)
    c = np.exp(-da / (3 * sigma_a)) * np.exp(-(1 - dot) / sigma_n)
    c = np.where(oob_mask, 0.0, c)
    return np.clip(c, 0.0, 1.0)


def confidence_mix(warped, center, c):
    """``c * warped + (1 - c) * center`` with ``c`` broadcast over channels."""
    c = np.asarray(c.data if isinstance(c, Tensor) else c)
    if c.ndim == 2:
        c = c[None]
    if isinstance(warped, Tensor) or isinstance(center, Tensor):
        warped = T.as_tensor(warped)
        center = T.as_tensor(center, like=warped)
        if warped.shape != center.shape:
            raise ValueError("warped and center shapes differ")
        cb = np.broadcast_to(c, warped.shape).astype(warped.dtype)
        return warped * Tensor(cb) + center * Tensor(1 - cb)
    warped = np.asarray(warped)
    center = np.asarray(center)
    if warped.shape != center.shape:
        raise ValueError("warped and center shapes differ")
    return (c * warped + (1 - c) * center).astype(warped.dtype)


def assemble_window(rgbs, albedos, normals, flows):
    """Align a window of frames to its central frame.

    Each side frame's color, albedo and normal are backward-warped with its
    flow, a confidence is computed from the warped AOVs, and all three
    buffers are mixed toward the central frame by that confidence. Returns
    ``(window [T, 10, H, W], confidences [T, H, W], oob masks [T, H, W])``.
    """
    t = len(rgbs)
    r = t // 2
    ca, cn = np.asarray(albedos[r]), np.asarray(normals[r])
    crgb = np.asarray(rgbs[r])
    frames, confs, oobs = [], [], []
    for i in range(t):
        flow = np.asarray(flows[i])
        if i == r:
            conf = np.ones(crgb.shape[1:])
            oob = np.zeros(crgb.shape[1:], dtype=bool)
            rgb, alb, nrm = crgb, ca, cn
        else:
            rgb, oob = warp_array(np.asarray(rgbs[i], dtype=np.float64), flow)
            alb, _ = warp_array(np.asarray(albedos[i], dtype=np.float64), flow)
            nrm, _ = warp_array(np.asarray(normals[i], dtype=np.float64), flow)
            conf = warp_confidence(alb, nrm, ca, cn, oob)
            rgb = confidence_mix(rgb, crgb, conf)
            alb = confidence_mix(alb, ca, conf)
            nrm = confidence_mix(nrm, cn, conf)
        frames.append(np.concatenate([rgb, alb, nrm, conf[None]], axis=0))
        confs.append(conf)
        oobs.append(oob)
    return np.stack(frames).astype(np.float32), np.stack(confs), np.stack(oobs)


def assemble_buffer(bufs, flows, confs):
    """Warp and confidence-mix an extra buffer window exactly like the color."""
    t = len(bufs)
    r = t // 2
    center = np.asarray(bufs[r], dtype=np.float64)
    out = []
    for i in range(t):
        if i == r:
            out.append(center)
            continue
        wb, _ = warp_array(np.asarray(bufs[i], dtype=np.float64), np.asarray(flows[i]))
        out.append(confidence_mix(wb, center, confs[i]))
    return np.stack(out).astype(np.float32)
