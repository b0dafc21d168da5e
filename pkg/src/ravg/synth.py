"""Procedural Monte Carlo scene generator and dataset persistence.

Scenes are stacks of textured 2D layers under per-layer affine motion.
Ground truth shading is analytic; the noisy estimator averages ``spp``
samples of (shading x random light factor) plus rare fireflies. Albedo,
normals and flows are exact and noise-free.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rtf, warp

PSEUDO_REF_SPP = 4096
LOW_SPP = 4
NOISE_PAIRS = [("low", "half"), ("low", "noisy"), ("half", "noisy"),
               ("noisy", "pseudo_ref"), ("half", "pseudo_ref")]
_STREAMS = {"render": 0, "input": 1, "target": 2, "pair": 3, "texture": 4}
MANIFEST_VERSION = 1


def half_spp(n: int) -> int:
    return max(1, math.floor(n / math.e))


def level_spp(level: str, n: int) -> int:
    table = {"low": LOW_SPP, "half": half_spp(n), "noisy": n, "pseudo_ref": PSEUDO_REF_SPP}
    if level not in table:
        raise ValueError(f"unknown noise level {level!r}")
    return table[level]


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, keys...)."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(k) & 0xFFFFFFFF for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys: int) -> int:
    return int(stream(seed, *keys).integers(0, 2**31 - 1))


# -- scene description ---------------------------------------------------------


@dataclass
class Layer:
    shape: str = "plane"  # plane | disk | quad
    size: tuple = (10.0, 10.0)  # disk radius uses size[0]; quad half extents
    texture: str = "checker"  # checker | gradient | noise | solid
    color0: tuple = (0.8, 0.2, 0.2)
    color1: tuple = (0.2, 0.2, 0.8)
    scale: float = 8.0
    center: tuple = (32.0, 32.0)
    velocity: tuple = (0.0, 0.0)
    angle: float = 0.0
    spin: float = 0.0
    tilt: tuple = (0.0, 0.0)
    bump: bool = False
    tex_seed: int = 0

    def angle_at(self, t: float) -> float:
        return self.angle + self.spin * t

    def origin_at(self, t: float) -> np.ndarray:
        return np.array(self.center) + np.array(self.velocity) * t

    def to_local(self, px, py, t):
        th = self.angle_at(t)
        ox, oy = self.origin_at(t)
        dx, dy = px - ox, py - oy
        c, s = math.cos(th), math.sin(th)
        return c * dx + s * dy, -s * dx + c * dy

    def to_screen(self, u, v, t):
        th = self.angle_at(t)
        ox, oy = self.origin_at(t)
        c, s = math.cos(th), math.sin(th)
        return c * u - s * v + ox, s * u + c * v + oy

    def inside(self, u, v):
        if self.shape == "plane":
            return np.ones(np.shape(u), dtype=bool)
        if self.shape == "disk":
            return u * u + v * v <= self.size[0] ** 2
        if self.shape == "quad":
            return (np.abs(u) <= self.size[0]) & (np.abs(v) <= self.size[1])
        raise ValueError(f"unknown shape {self.shape!r}")

    def albedo(self, u, v):
        c0 = np.array(self.color0)[:, None]
        c1 = np.array(self.color1)[:, None]
        if self.texture == "solid":
            m = np.zeros_like(u)
        elif self.texture == "checker":
            m = (np.floor(u / self.scale) + np.floor(v / self.scale)) % 2
        elif self.texture == "gradient":
            m = np.clip(0.5 + u / (4 * self.scale), 0, 1)
        elif self.texture == "noise":
            m = value_noise(u / self.scale, v / self.scale, self.tex_seed)
        else:
            raise ValueError(f"unknown texture {self.texture!r}")
        return c0 * (1 - m) + c1 * m

    def normal(self, u, v, t):
        nx = np.full(np.shape(u), float(self.tilt[0]))
        ny = np.full(np.shape(u), float(self.tilt[1]))
        if self.bump and self.shape == "disk":
            r = self.size[0]
            nx = nx + 0.8 * u / r
            ny = ny + 0.8 * v / r
        nz = np.sqrt(np.maximum(1.0 - nx * nx - ny * ny, 0.05))
        norm = np.sqrt(nx * nx + ny * ny + nz * nz)
        nx, ny, nz = nx / norm, ny / norm, nz / norm
        th = self.angle_at(t)
        c, s = math.cos(th), math.sin(th)
        return np.stack([c * nx - s * ny, s * nx + c * ny, nz])


def _hash01(ix, iy, seed):
    h = (ix.astype(np.int64) * 374761393 + iy.astype(np.int64) * 668265263
         + int(seed) * 2147483647) & 0xFFFFFFFF
    h = ((h ^ (h >> 13)) * 1274126177) & 0xFFFFFFFF
    h = h ^ (h >> 16)
    return (h & 0xFFFFFF) / float(0xFFFFFF)


def value_noise(x, y, seed=0):
    """Smooth lattice noise in [0, 1], defined on the whole plane."""
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    sx = fx * fx * (3 - 2 * fx)
    sy = fy * fy * (3 - 2 * fy)
    a = _hash01(x0, y0, seed)
    b = _hash01(x0 + 1, y0, seed)
    c = _hash01(x0, y0 + 1, seed)
    d = _hash01(x0 + 1, y0 + 1, seed)
    return (a * (1 - sx) + b * sx) * (1 - sy) + (c * (1 - sx) + d * sx) * sy


@dataclass
class Scene:
    name: str = "custom"
    width: int = 64
    height: int = 64
    n_frames: int = 24
    layers: list = field(default_factory=list)
    light: tuple = (0.4, -0.3, 0.866)
    ambient: float = 0.3
    sigma_s: float = 0.6
    p_ff: float = 5e-4
    i_ff: float = 10.0
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layers"] = [asdict(l) for l in self.layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        d = dict(d)
        layers = [Layer(**{k: tuple(v) if isinstance(v, list) else v for k, v in l.items()})
                  for l in d.pop("layers", [])]
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(layers=layers, **d)

    def static(self) -> bool:
        return all(l.velocity == (0.0, 0.0) and l.spin == 0 for l in self.layers)


@dataclass
class Surface:
    """Per-pixel visible-surface record at one frame."""
    layer: np.ndarray  # [H, W] topmost layer index
    u: np.ndarray
    v: np.ndarray
    albedo: np.ndarray
    normal: np.ndarray
    shading: np.ndarray  # expected color without fireflies


def _pixel_grid(scene: Scene):
    ys, xs = np.mgrid[0:scene.height, 0:scene.width].astype(np.float64)
    return xs, ys


def surface(scene: Scene, t: float) -> Surface:
    xs, ys = _pixel_grid(scene)
    h, w = xs.shape
    layer = np.full((h, w), -1)
    uu = np.zeros((h, w))
    vv = np.zeros((h, w))
    alb = np.zeros((3, h, w))
    nrm = np.zeros((3, h, w))
    nrm[2] = 1
    for i, L in enumerate(scene.layers):
        u, v = L.to_local(xs, ys, t)
        hit = L.inside(u, v)
        if not hit.any():
            continue
        layer[hit] = i
        uu[hit] = u[hit]
        vv[hit] = v[hit]
        alb[:, hit] = L.albedo(u[hit], v[hit])
        nrm[:, hit] = L.normal(u[hit], v[hit], t)
    light = np.array(scene.light, dtype=np.float64)
    light /= np.linalg.norm(light)
    ndl = np.maximum(np.tensordot(light, nrm, axes=1), 0)
    shade = alb * (scene.ambient + (1 - scene.ambient) * ndl)[None]
    return Surface(layer, uu, vv, alb, nrm, shade)


def ground_truth(scene: Scene, t: float) -> np.ndarray:
    """Expected value of the per-pixel estimator, fireflies included."""
    return surface(scene, t).shading + scene.p_ff * scene.i_ff


def flow_to(scene: Scene, center: float, source: float) -> np.ndarray:
    """Backward flow [2, H, W]: central-frame pixel -> its location in ``source``."""
    surf = surface(scene, center)
    xs, ys = _pixel_grid(scene)
    flow = np.zeros((2,) + xs.shape)
    if center == source:
        return flow
    for i, L in enumerate(scene.layers):
        m = surf.layer == i
        if not m.any():
            continue
        sx, sy = L.to_screen(surf.u[m], surf.v[m], source)
        flow[0][m] = sx - xs[m]
        flow[1][m] = sy - ys[m]
    return flow


# -- rendering -----------------------------------------------------------------


@dataclass
class FrameData:
    rgb: np.ndarray
    albedo: np.ndarray
    normal: np.ndarray
    flow: np.ndarray  # to the frame it is aligned against
    spp: int
    ground_truth: np.ndarray
    t: int = 0


def sample_mean(shading: np.ndarray, spp: int, sigma_s: float, p_ff: float, i_ff: float,
                rng: np.random.Generator) -> np.ndarray:
    """Mean of ``spp`` samples of shading * L + i_ff * [firefly].

    L is gamma distributed with mean 1 and variance sigma_s**2, shared by
    the color channels of a sample. Sums of gamma and Bernoulli samples are
    drawn directly from their closed-form distributions.
    """
    h, w = shading.shape[1:]
    if sigma_s > 0:
        k = 1.0 / sigma_s ** 2
        light = rng.gamma(k * spp, sigma_s ** 2, size=(h, w)) / spp
    else:
        light = np.ones((h, w))
    out = shading * light[None]
    if p_ff > 0:
        hits = rng.binomial(spp, p_ff, size=(h, w))
        out = out + (i_ff * hits / spp)[None]
    return out


def render_frame(scene: Scene, t: int, spp: int, seed: int, center_t: int | None = None) -> FrameData:
    if spp < 1:
        raise ValueError("spp must be >= 1")
    surf = surface(scene, t)
    rng = stream(seed, _STREAMS["render"], t, spp)
    rgb = sample_mean(surf.shading, spp, scene.sigma_s, scene.p_ff, scene.i_ff, rng)
    center_t = t if center_t is None else center_t
    flow = flow_to(scene, center_t, t)
    gt = surf.shading + scene.p_ff * scene.i_ff
    return FrameData(rgb.astype(np.float32), surf.albedo.astype(np.float32),
                     surf.normal.astype(np.float32), flow.astype(np.float32), spp,
                     gt.astype(np.float32), t)


# -- training samples ------------------------------------------------------------


@dataclass
class TrainSample:
    inputs: np.ndarray  # [T, 10, H, W]
    target: np.ndarray  # [3, H, W]
    ground_truth: np.ndarray  # [3, H, W]
    flows: np.ndarray  # [T, 2, H, W]
    confidence: np.ndarray  # [T, H, W]
    noise_pair: tuple = ("half", "pseudo_ref")
    meta: dict = field(default_factory=dict)

    @property
    def frames(self) -> int:
        return self.inputs.shape[0]

    def crop(self, y: int, x: int, h: int, w: int) -> "TrainSample":
        sl = (slice(y, y + h), slice(x, x + w))
        meta = dict(self.meta, tile=[y, x, h, w])
        return TrainSample(self.inputs[..., sl[0], sl[1]], self.target[..., sl[0], sl[1]],
                           self.ground_truth[..., sl[0], sl[1]], self.flows[..., sl[0], sl[1]],
                           self.confidence[..., sl[0], sl[1]], self.noise_pair, meta)


def make_sequence(scene: Scene, center_t: int, k: int, noise_pair, seed: int, n: int = 32) -> TrainSample:
    """Render, warp and mix a window around ``center_t`` plus an independent target."""
    if tuple(noise_pair) not in NOISE_PAIRS:
        raise ValueError(f"noise pair {noise_pair} not in {NOISE_PAIRS}")
    lo, hi = center_t - k, center_t + k
    if lo < 0 or hi >= scene.n_frames:
        raise ValueError(f"window [{lo}, {hi}] outside scene frames [0, {scene.n_frames - 1}]")
    in_level, tgt_level = noise_pair
    spp_in = level_spp(in_level, n)
    spp_tgt = level_spp(tgt_level, n)
    in_seed = derive_seed(seed, _STREAMS["input"])
    tgt_seed = derive_seed(seed, _STREAMS["target"])
    frames = [render_frame(scene, t, spp_in, in_seed, center_t) for t in range(lo, hi + 1)]
    window, confs, _ = warp.assemble_window([f.rgb for f in frames], [f.albedo for f in frames],
                                            [f.normal for f in frames], [f.flow for f in frames])
    target = render_frame(scene, center_t, spp_tgt, tgt_seed)
    meta = {"scene": scene.name, "center_t": center_t, "seed": seed, "spp_in": spp_in,
            "spp_target": spp_tgt}
    return TrainSample(window, target.rgb, frames[k].ground_truth,
                       np.stack([f.flow for f in frames]), confs.astype(np.float32),
                       tuple(noise_pair), meta)


def scene_samples(scene: Scene, k: int, seed: int, n: int = 32, pairs=None,
                  centers=None) -> list[TrainSample]:
    """One sample per full window, with a randomly drawn noise pair each."""
    pairs = NOISE_PAIRS if pairs is None else [tuple(p) for p in pairs]
    rng = stream(seed, _STREAMS["pair"])
    centers = range(k, scene.n_frames - k) if centers is None else centers
    out = []
    for c in centers:
        pair = pairs[int(rng.integers(len(pairs)))]
        out.append(make_sequence(scene, c, k, pair, derive_seed(seed, c), n))
    return out


def tile(sample: TrainSample, size: int) -> list[TrainSample]:
    h, w = sample.inputs.shape[-2:]
    if size <= 0 or (size >= h and size >= w):
        return [sample]
    out = []
    for y in range(0, h - size + 1, size):
        for x in range(0, w - size + 1, size):
            out.append(sample.crop(y, x, size, size))
    return out


# -- sequences for inference -------------------------------------------------------


@dataclass
class Sequence:
    """Whole rendered sequence with pairwise flows, for sliding-window inference."""
    rgb: np.ndarray
    albedo: np.ndarray
    normal: np.ndarray
    ground_truth: np.ndarray | None
    flows: dict  # (center, source) -> [2, H, W]
    k: int = 2
    meta: dict = field(default_factory=dict)

    def flow(self, center: int, source: int) -> np.ndarray:
        if center == source:
            return np.zeros((2,) + self.rgb.shape[-2:], dtype=np.float32)
        return self.flows[(center, source)]


def render_sequence(scene: Scene, spp: int, seed: int, k: int = 2, frames=None) -> Sequence:
    frames = range(scene.n_frames) if frames is None else list(frames)
    frames = list(frames)
    rendered = [render_frame(scene, t, spp, seed) for t in frames]
    flows = {}
    for ci, c in enumerate(frames):
        for si, s in enumerate(frames):
            if si != ci and abs(si - ci) <= k:
                flows[(ci, si)] = flow_to(scene, c, s).astype(np.float32)
    return Sequence(np.stack([f.rgb for f in rendered]), np.stack([f.albedo for f in rendered]),
                    np.stack([f.normal for f in rendered]),
                    np.stack([f.ground_truth for f in rendered]), flows, k,
                    {"scene": scene.name, "spp": spp, "seed": seed})


def write_sequence(seq: Sequence, path) -> None:
    os.makedirs(path, exist_ok=True)
    n = len(seq.rgb)
    for i in range(n):
        d = os.path.join(path, f"f{i:04d}")
        os.makedirs(d, exist_ok=True)
        rtf.write(os.path.join(d, "rgb.rtf"), seq.rgb[i], "rgb")
        rtf.write(os.path.join(d, "albedo.rtf"), seq.albedo[i], "albedo")
        rtf.write(os.path.join(d, "normal.rtf"), seq.normal[i], "normal")
        if seq.ground_truth is not None:
            rtf.write(os.path.join(d, "gt.rtf"), seq.ground_truth[i], "gt")
        for d_off in range(-seq.k, seq.k + 1):
            if d_off and (i, i + d_off) in seq.flows:
                name = f"flow_t{d_off:+d}"
                rtf.write(os.path.join(d, f"{name}.rtf"), seq.flows[(i, i + d_off)], name)
    with open(os.path.join(path, "sequence.json"), "w") as fh:
        json.dump({"version": MANIFEST_VERSION, "frames": n, "k": seq.k, "meta": seq.meta},
                  fh, indent=2, sort_keys=True)


def read_sequence(path) -> Sequence:
    try:
        with open(os.path.join(path, "sequence.json")) as fh:
            info = json.load(fh)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read sequence in {path}: {exc}") from None
    n, k = int(info["frames"]), int(info["k"])
    rgb, alb, nrm, gt, flows = [], [], [], [], {}
    for i in range(n):
        d = os.path.join(path, f"f{i:04d}")
        rgb.append(rtf.read(os.path.join(d, "rgb.rtf")))
        alb.append(rtf.read(os.path.join(d, "albedo.rtf")))
        nrm.append(rtf.read(os.path.join(d, "normal.rtf")))
        gpath = os.path.join(d, "gt.rtf")
        gt.append(rtf.read(gpath) if os.path.exists(gpath) else None)
        for d_off in range(-k, k + 1):
            fp = os.path.join(d, f"flow_t{d_off:+d}.rtf")
            if d_off and os.path.exists(fp):
                flows[(i, i + d_off)] = rtf.read(fp)
    have_gt = n > 0 and all(g is not None for g in gt)
    return Sequence(np.stack(rgb) if n else np.zeros((0, 3, 1, 1), np.float32),
                    np.stack(alb) if n else np.zeros((0, 3, 1, 1), np.float32),
                    np.stack(nrm) if n else np.zeros((0, 3, 1, 1), np.float32),
                    np.stack(gt) if have_gt else None, flows, k, info.get("meta", {}))


# -- datasets ------------------------------------------------------------------------


class DatasetError(ValueError):
    pass


def dataset_write(samples, path, tile_size: int = 0) -> list[dict]:
    """Write samples (optionally tiled) and a manifest; returns manifest records."""
    os.makedirs(path, exist_ok=True)
    records = []
    idx = 0
    for s in samples:
        for part in tile(s, tile_size):
            name = f"s{idx:05d}"
            d = os.path.join(path, name)
            os.makedirs(d, exist_ok=True)
            rtf.write(os.path.join(d, "input.rtf"), part.inputs, "input")
            rtf.write(os.path.join(d, "target.rtf"), part.target, "target")
            rtf.write(os.path.join(d, "gt.rtf"), part.ground_truth, "gt")
            r = part.frames // 2
            for i in range(part.frames):
                off = i - r
                if off:
                    rtf.write(os.path.join(d, f"flow_t{off:+d}.rtf"), part.flows[i], f"flow_t{off:+d}")
                    rtf.write(os.path.join(d, f"conf_t{off:+d}.rtf"), part.confidence[i], f"conf_t{off:+d}")
            meta = dict(part.meta, noise_pair=list(part.noise_pair), frames=part.frames)
            with open(os.path.join(d, "sample.json"), "w") as fh:
                json.dump(meta, fh, indent=2, sort_keys=True)
            records.append({"id": name, "scene": meta.get("scene"), "seed": meta.get("seed"),
                            "center_t": meta.get("center_t"), "noise_pair": list(part.noise_pair),
                            "tile": meta.get("tile")})
            idx += 1
    manifest = {"version": MANIFEST_VERSION, "count": len(records), "samples": records}
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return records


def read_manifest(path) -> dict:
    try:
        with open(os.path.join(path, "manifest.json")) as fh:
            man = json.load(fh)
        if man.get("version") != MANIFEST_VERSION or man["count"] != len(man["samples"]):
            raise DatasetError("manifest version or count mismatch")
        return man
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DatasetError(f"missing or corrupt manifest in {path}: {exc}") from None


def dataset_read(path) -> list[TrainSample]:
    man = read_manifest(path)
    out = []
    for rec in man["samples"]:
        d = os.path.join(path, rec["id"])
        try:
            with open(os.path.join(d, "sample.json")) as fh:
                meta = json.load(fh)
            inputs = rtf.read(os.path.join(d, "input.rtf"))
            t = inputs.shape[0]
            r = t // 2
            h, w = inputs.shape[-2:]
            flows = np.zeros((t, 2, h, w), dtype=np.float32)
            confs = np.ones((t, h, w), dtype=np.float32)
            for i in range(t):
                off = i - r
                if off:
                    flows[i] = rtf.read(os.path.join(d, f"flow_t{off:+d}.rtf"))
                    confs[i] = rtf.read(os.path.join(d, f"conf_t{off:+d}.rtf"))
            sample = TrainSample(inputs, rtf.read(os.path.join(d, "target.rtf")),
                                 rtf.read(os.path.join(d, "gt.rtf")), flows, confs,
                                 tuple(meta.pop("noise_pair")), meta)
        except (OSError, ValueError, KeyError) as exc:
            raise DatasetError(f"cannot read sample {rec['id']}: {exc}") from None
        sample.meta.pop("frames", None)
        out.append(sample)
    return out


# -- presets ---------------------------------------------------------------------------


def _pan_checker(w, h, n, seed):
    return [
        Layer("plane", texture="checker", scale=8, color0=(0.85, 0.8, 0.7), color1=(0.15, 0.2, 0.3),
              center=(0.0, 0.0), velocity=(1.0, 0.0)),
        Layer("quad", size=(10, 6), texture="gradient", scale=5, color0=(0.9, 0.3, 0.1),
              color1=(0.1, 0.6, 0.9), center=(w * 0.5, h * 0.3), velocity=(0.0, 1.0),
              tilt=(0.3, 0.1)),
    ]


def _orbit_disks(w, h, n, seed):
    return [
        Layer("plane", texture="noise", scale=6, color0=(0.7, 0.65, 0.5), color1=(0.2, 0.3, 0.25),
              center=(w / 2, h / 2), spin=0.01, tex_seed=seed + 1),
        Layer("disk", size=(12, 12), texture="checker", scale=5, color0=(0.9, 0.9, 0.85),
              color1=(0.6, 0.1, 0.1), center=(w * 0.35, h * 0.45), velocity=(0.6, -0.3),
              spin=0.05, bump=True),
        Layer("disk", size=(8, 8), texture="solid", color0=(0.2, 0.5, 0.9),
              center=(w * 0.7, h * 0.65), velocity=(-0.4, 0.25), bump=True),
    ]


def _slide_quads(w, h, n, seed):
    return [
        Layer("plane", texture="gradient", scale=12, color0=(0.3, 0.35, 0.6), color1=(0.9, 0.8, 0.5),
              center=(w / 2, h / 2)),
        Layer("quad", size=(14, 9), texture="noise", scale=4, color0=(0.95, 0.9, 0.8),
              color1=(0.3, 0.15, 0.1), center=(w * 0.3, h * 0.35), velocity=(0.5, 0.25),
              spin=0.02, tilt=(-0.3, 0.2), tex_seed=seed + 2),
        Layer("quad", size=(7, 12), texture="checker", scale=3, color0=(0.1, 0.1, 0.1),
              color1=(0.8, 0.8, 0.2), center=(w * 0.72, h * 0.6), velocity=(-0.35, 0.1),
              spin=-0.015, tilt=(0.25, 0.25)),
    ]


def _translate_noise(w, h, n, seed):
    return [
        Layer("plane", texture="noise", scale=7, color0=(0.8, 0.75, 0.6), color1=(0.15, 0.25, 0.35),
              center=(0.0, 0.0), velocity=(0.7, 0.4), tex_seed=seed + 3),
    ]


def _static_noise(w, h, n, seed):
    return [
        Layer("plane", texture="noise", scale=6, color0=(0.75, 0.7, 0.55), color1=(0.2, 0.25, 0.35),
              center=(0.0, 0.0), tex_seed=seed + 4),
        Layer("disk", size=(14, 14), texture="checker", scale=6, color0=(0.9, 0.85, 0.8),
              color1=(0.5, 0.1, 0.15), center=(w * 0.5, h * 0.5), bump=True),
    ]


PRESETS = {
    "pan-checker": _pan_checker,
    "orbit-disks": _orbit_disks,
    "slide-quads": _slide_quads,
    "translate-noise": _translate_noise,
    "static-noise": _static_noise,
}
SUITE = ["pan-checker", "orbit-disks", "slide-quads"]


def make_scene(name: str, width: int = 64, height: int = 64, n_frames: int = 24,
               seed: int = 0, **kw) -> Scene:
    if name not in PRESETS:
        raise ValueError(f"unknown scene preset {name!r}; choose from {sorted(PRESETS)}")
    layers = PRESETS[name](width, height, n_frames, seed)
    return Scene(name=name, width=width, height=height, n_frames=n_frames, layers=layers,
                 seed=seed, **kw)


def load_scene(spec: str, **kw) -> Scene:
    """Preset name or path to a scene JSON file."""
    if spec.endswith(".json") or os.path.exists(spec):
        with open(spec) as fh:
            return Scene.from_dict(json.load(fh))
    return make_scene(spec, **kw)
