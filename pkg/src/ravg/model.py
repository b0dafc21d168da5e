"""Spatio-temporal kernel-predicting ResNet with RA blocks, plus the tKPCN baseline."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels as K
from . import rtf
from . import tensor as T
from . import warp
from .ra import RABlock, mean_block, ra_block
from .tensor import ConvLayer, Tensor

CHECKPOINT_VERSION = 1
IN_CHANNELS = 10  # rgb, albedo, normal, confidence


class ModelConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    k: int = 2
    channels: int = 16
    n_res_blocks: int = 6
    ra_positions: list = field(default_factory=lambda: [2, 4, 6])
    skip_after_ra: int = 2
    kh: int = 3
    kw: int = 3
    threshold: float | None = None
    baseline: bool = False
    normalization: str = "threshold"

    @property
    def frames(self) -> int:
        return 2 * self.k + 1

    @property
    def taps(self) -> int:
        return self.frames * self.kh * self.kw

    @property
    def kernel_threshold(self) -> float:
        return K.default_threshold(self.taps) if self.threshold is None else self.threshold

    def problems(self) -> list[str]:
        out = []
        if self.k < 1 or self.channels < 1 or self.n_res_blocks < 0:
            out.append("k, channels must be positive and n_res_blocks non-negative")
        if self.kh < 1 or self.kw < 1 or self.kh % 2 == 0 or self.kw % 2 == 0:
            out.append("kernel dims kh, kw must be positive and odd")
        bad = [p for p in self.ra_positions if not 1 <= p <= self.n_res_blocks]
        if bad:
            out.append(f"ra_positions {bad} outside [1, {self.n_res_blocks}]")
        if self.skip_after_ra < 0:
            out.append("skip_after_ra must be non-negative")
        if self.kh >= 1 and self.k >= 1 and not self.kernel_threshold < 1.0 / self.taps:
            out.append(f"threshold {self.kernel_threshold} must be < 1/K = {1.0 / self.taps}")
        if self.normalization not in ("threshold", "softmax"):
            out.append(f"unknown normalization {self.normalization!r}")
        return out

    def validate(self):
        probs = self.problems()
        if probs:
            raise ModelConfigError("invalid model config: " + "; ".join(probs))
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ModelConfigError(f"unknown config keys {sorted(extra)}")
        return cls(**d)


PRESETS = {
    "desk-tiny": dict(),
    "desk-tkpcn": dict(ra_positions=[], skip_after_ra=0, baseline=True),
    "toy": dict(channels=4, n_res_blocks=2, ra_positions=[1, 2], skip_after_ra=1),
    "full": dict(channels=80, n_res_blocks=24, ra_positions=[3, 6, 9, 12, 15, 24],
                  skip_after_ra=4, kh=5, kw=5),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ModelConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    d = dict(PRESETS[name])
    d.update(overrides)
    return ModelConfig(**d).validate()


class ResBlock:
    def __init__(self, channels, rng, dtype, name):
        self.conv1 = ConvLayer(channels, channels, 3, rng=rng, dtype=dtype, name=f"{name}.conv1")
        self.conv2 = ConvLayer(channels, channels, 3, rng=rng, dtype=dtype, name=f"{name}.conv2")

    def parameters(self):
        return self.conv1.parameters() + self.conv2.parameters()

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv1(T.leaky_relu(x))
        h = self.conv2(T.leaky_relu(h))
        return x + h


class Model:
    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        config.validate()
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        c = config.channels
        self.embed = ConvLayer(IN_CHANNELS, c, 3, rng=rng, dtype=dtype, name="embed")
        self.blocks = [ResBlock(c, rng, dtype, f"res{i + 1}") for i in range(config.n_res_blocks)]
        self.ra = {p: RABlock(c, rng=rng, dtype=dtype, name=f"ra{p}")
                   for p in sorted(config.ra_positions)}
        self.fuse = []
        if config.baseline:
            self.fuse = [ConvLayer(config.frames * c, c, 3, rng=rng, dtype=dtype, name="fuse1"),
                         ConvLayer(c, c, 3, rng=rng, dtype=dtype, name="fuse2")]
        self.head = ConvLayer(c, config.taps, 3, rng=rng, dtype=dtype, name="head")

    def modules(self):
        yield self.embed
        yield from self.blocks
        for p in sorted(self.ra):
            yield self.ra[p]
        yield from self.fuse
        yield self.head

    def parameters(self) -> list[Tensor]:
        return T.parameters_of(self.modules())

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for p in self.parameters():
            if p.name in out:
                raise RuntimeError(f"duplicate parameter name {p.name}")
            out[p.name] = p
        return out

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def set_identity(self):
        """Force RA mixing to ~0 and the head to emit the identity kernel."""
        for blk in self.ra.values():
            blk.conv2.weight.data[:] = 0
            blk.conv2.bias.data[:] = -20.0
        self.head.weight.data[:] = 0
        self.head.bias.data[:] = 0
        self.head.bias.data[K.central_tap(self.config.frames, self.config.kh, self.config.kw)] = 1


def prepare_inputs(window: np.ndarray) -> np.ndarray:
    """Network features from a [N, T, 10, H, W] window: log-compressed color, raw AOVs."""
    feats = np.array(window, dtype=np.float64, copy=True)
    feats[:, :, :3] = np.log1p(np.maximum(feats[:, :, :3], 0))
    return feats


def forward(model: Model, window, threshold: float | None = None, kernels_only: bool = False):
    """Denoise the central frame of each window.

    ``window`` is [N, T, 10, H, W] (or [T, 10, H, W]) of pre-warped frames.
    Returns a dict with ``raw`` kernels, normalized ``kernels`` and
    ``denoised`` [N, 3, H, W].
    """
    cfg = model.config
    w = np.asarray(window.data if isinstance(window, Tensor) else window)
    if w.ndim == 4:
        w = w[None]
    n, t, ch, h, wd = w.shape
    if t != cfg.frames:
        raise ValueError(f"window has {t} frames, model expects {cfg.frames}")
    if ch != IN_CHANNELS:
        raise ValueError(f"frames have {ch} channels, expected {IN_CHANNELS}")
    feats = prepare_inputs(w).astype(model.dtype)
    # frame-major batch: rows [tau*N:(tau+1)*N] belong to frame tau
    x = Tensor(np.ascontiguousarray(feats.transpose(1, 0, 2, 3, 4)).reshape(t * n, ch, h, wd))
    hcur = T.leaky_relu(model.embed(x))
    skip = hcur
    n_ra = 0
    for i, blk in enumerate(model.blocks, start=1):
        hcur = blk(hcur)
        if i in model.ra:
            seq = [T.slice_axis(hcur, 0, f * n, (f + 1) * n) for f in range(t)]
            seq = ra_block(seq, model.ra[i]) if t >= 4 else mean_block(seq)
            hcur = T.concat(seq, axis=0)
            if n_ra < cfg.skip_after_ra:
                hcur = hcur + skip
            n_ra += 1
    if cfg.baseline:
        frames = [T.slice_axis(hcur, 0, f * n, (f + 1) * n) for f in range(t)]
        hc = T.concat(frames, axis=1)
        for conv in model.fuse:
            hc = T.leaky_relu(conv(hc))
    else:
        r = cfg.k
        hc = T.slice_axis(hcur, 0, r * n, (r + 1) * n)
    raw = model.head(hc)
    if cfg.normalization == "softmax":
        kf = K.softmax_normalize(raw, cfg.frames, cfg.kh, cfg.kw)
    else:
        thr = cfg.kernel_threshold if threshold is None else threshold
        kf = K.threshold_normalize(raw, thr, cfg.frames, cfg.kh, cfg.kw)
    out = {"raw": raw, "kernels": kf}
    if kernels_only:
        return out
    color = Tensor(np.ascontiguousarray(w[:, :, :3]).astype(model.dtype))
    out["denoised"] = K.apply_kernels(kf, color)
    out["color"] = color
    return out


def build(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    return Model(config, seed, dtype)


# -- checkpoints -----------------------------------------------------------------


class CheckpointError(ValueError):
    pass


def save(model: Model, path, extra: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    meta = {"version": CHECKPOINT_VERSION, "config": model.config.to_dict(), "seed": model.seed,
            "dtype": "f64" if model.dtype == np.float64 else "f32"}
    if extra:
        meta.update(extra)
    params = {name: p.data for name, p in model.named_parameters().items()}
    rtf.write_many(os.path.join(path, "params.rtf"), params)
    with open(os.path.join(path, "model.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def read_meta(path) -> dict:
    try:
        with open(os.path.join(path, "model.json")) as fh:
            return json.load(fh)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint metadata in {path}: {exc}") from None


def load(path, expect: dict | None = None) -> Model:
    """Load a checkpoint; ``expect`` maps config fields to required values."""
    meta = read_meta(path)
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
    cfg = ModelConfig.from_dict(meta["config"])
    for key, want in (expect or {}).items():
        have = getattr(cfg, key)
        if want is not None and have != want:
            raise CheckpointError(f"checkpoint has {key}={have}, requested {want}")
    dtype = np.float64 if meta.get("dtype") == "f64" else np.float32
    model = Model(cfg, meta.get("seed", 0), dtype)
    try:
        params = rtf.read_many(os.path.join(path, "params.rtf"))
    except (OSError, rtf.RTFError) as exc:
        raise CheckpointError(f"cannot read parameters: {exc}") from None
    named = model.named_parameters()
    if set(params) != set(named):
        raise CheckpointError("parameter names do not match the config")
    for name, p in named.items():
        if params[name].shape != p.shape:
            raise CheckpointError(f"{name}: shape {params[name].shape} != {p.shape}")
        p.data = params[name].astype(dtype)
    return model


# -- sequence inference ----------------------------------------------------------


def clamped_window(center: int, k: int, n_frames: int):
    """Frame indices for a window around ``center``, clamped to the sequence."""
    idx = [min(max(center + d, 0), n_frames - 1) for d in range(-k, k + 1)]
    clamped = any(i != center + d for i, d in zip(idx, range(-k, k + 1)))
    return idx, clamped


def denoise_sequence(model: Model, seq, passes: int = 1, threshold: float | None = None,
                     aov: np.ndarray | None = None, return_kernels: bool = False):
    """Sliding-window inference over a whole sequence.

    ``seq`` exposes ``rgb``, ``albedo``, ``normal`` ([F, 3, H, W]) and
    ``flow(center, source)``. Pass p > 1 reuses pass p-1 output as color.
    Returns a dict with ``denoised`` [F, 3, H, W], ``clamped`` flags, and
    optionally ``aov`` and per-frame ``kernels``.
    """
    if passes < 1:
        raise ValueError("passes must be >= 1")
    n_frames = len(seq.rgb)
    if n_frames == 0:
        raise ValueError("empty frame sequence")
    k = model.config.k
    color = np.asarray(seq.rgb)
    aov_cur = None if aov is None else np.asarray(aov)
    kernels = []
    flags = []
    for p in range(passes):
        outs, aovs = [], []
        kernels, flags = [], []
        for c in range(n_frames):
            idx, clamped = clamped_window(c, k, n_frames)
            flows = [seq.flow(c, i) for i in idx]
            win, confs, _ = warp.assemble_window([color[i] for i in idx],
                                                 [seq.albedo[i] for i in idx],
                                                 [seq.normal[i] for i in idx], flows)
            with T.no_grad():
                res = forward(model, win[None], threshold)
                outs.append(res["denoised"].data[0])
                if aov_cur is not None:
                    awin = warp.assemble_buffer([aov_cur[i] for i in idx], flows, confs)
                    aovs.append(K.apply_to_aov(res["kernels"], Tensor(awin[None].astype(model.dtype))).data[0])
            kernels.append(res["kernels"])
            flags.append(clamped)
        color = np.stack(outs)
        if aov_cur is not None:
            aov_cur = np.stack(aovs)
    out = {"denoised": color, "clamped": flags}
    if aov is not None:
        out["aov"] = aov_cur
    if return_kernels:
        out["kernels"] = kernels
    return out
