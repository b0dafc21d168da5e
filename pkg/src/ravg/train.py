"""Optimization loop, validation, and the ablation harness."""
from __future__ import annotations

import json
import logging
import os
import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernels as K
from . import losses
from . import model as M
from . import rtf
from . import tensor as T
from .losses import LossConfig
from .synth import TrainSample, stream
from .tensor import Tensor

log = logging.getLogger(__name__)

_SAMPLER = 11
_CROPS = 12


class NonFiniteLoss(FloatingPointError):
    def __init__(self, step, terms):
        super().__init__(f"non-finite loss at step {step}: {terms}")
        self.step = step
        self.terms = terms


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 2
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss: LossConfig = field(default_factory=LossConfig)
    val_every: int = 100
    seed: int = 0
    post_train: bool = True
    phase2_frac: float = 0.2
    phase2_global: float = 0.1
    crop: int = 32
    clip_norm: float = 10.0

    def __post_init__(self):
        if self.steps <= 0 or self.batch < 1:
            raise ValueError("steps must be > 0 and batch >= 1")
        if not 0 <= self.phase2_frac <= 1:
            raise ValueError("phase2_frac must be in [0, 1]")
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)

    def to_dict(self):
        return asdict(self)

    def phase2_start(self) -> int:
        if not self.post_train:
            return self.steps
        return int(round(self.steps * (1 - self.phase2_frac)))

    def loss_at(self, step: int) -> LossConfig:
        if step >= self.phase2_start():
            return replace(self.loss, global_=max(self.loss.global_, self.phase2_global))
        return self.loss


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)
    validations: list = field(default_factory=list)
    best_step: int | None = None
    best_loss: float = float("inf")

    def losses(self) -> np.ndarray:
        return np.array([s["loss"] for s in self.steps])


class Adam:
    """First/second moment adaptive update with bias correction."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def state(self) -> dict:
        out = {"t": np.array([self.t], dtype=np.float64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state(self, st: dict):
        self.t = int(st["t"][0])
        for i in range(len(self.params)):
            self.m[i] = st[f"m{i}"].astype(self.params[i].dtype)
            self.v[i] = st[f"v{i}"].astype(self.params[i].dtype)


def clip_grad_norm(params, max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2))
                              for p in params if p.grad is not None)))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * p.dtype.type(scale)
    return total


def canonical_order(dataset) -> list[int]:
    """Content-keyed order, so sampling never depends on how the list was built."""
    def key(i):
        s = dataset[i]
        return (zlib.crc32(s.inputs.tobytes()), zlib.crc32(s.target.tobytes()), i)
    return sorted(range(len(dataset)), key=key)


def make_batch(dataset, step: int, cfg: TrainConfig):
    """Seeded batch draw; indices depend on (seed, step) only, never storage order."""
    rng = stream(cfg.seed, _SAMPLER, step)
    idx = rng.integers(len(dataset), size=cfg.batch)
    wins, refs = [], []
    crng = stream(cfg.seed, _CROPS, step)
    for i in idx:
        s = dataset[int(i)]
        h, w = s.inputs.shape[-2:]
        c = cfg.crop
        if c and (h > c or w > c):
            y = int(crng.integers(h - c + 1))
            x = int(crng.integers(w - c + 1))
            s = s.crop(y, x, min(c, h), min(c, w))
        wins.append(s.inputs)
        refs.append(s.target)
    return np.stack(wins), np.stack(refs), idx


def loss_on(model, window, ref, loss_cfg: LossConfig, threshold=None):
    out = M.forward(model, window, threshold, kernels_only=True)
    color = Tensor(np.ascontiguousarray(window[:, :, :3]).astype(model.dtype))
    ref_t = Tensor(np.asarray(ref).astype(model.dtype))
    loss, terms = losses.temporal_loss(out["kernels"], color, ref_t, loss_cfg, return_terms=True)
    return loss, terms, out


def validate(model, dataset, loss_cfg: LossConfig | None = None, threshold=None,
             reference: str = "gt") -> dict:
    """Aggregate loss, PSNR/SSIM (min/avg/max) and frame weights over a dataset."""
    loss_cfg = loss_cfg or LossConfig()
    vals = {"loss": [], "psnr": [], "ssim": [], "input_psnr": [], "input_ssim": []}
    avgs, maxs = [], []
    for s in dataset:
        with T.no_grad():
            loss, _, out = loss_on(model, s.inputs[None], s.target[None], loss_cfg, threshold)
            den = M.forward(model, s.inputs[None], threshold)["denoised"].data[0]
        ref = s.ground_truth if reference == "gt" else s.target
        center = s.inputs[s.frames // 2, :3]
        vals["loss"].append(float(loss.data))
        vals["psnr"].append(losses.psnr(den, ref))
        vals["ssim"].append(losses.ssim(den, ref))
        vals["input_psnr"].append(losses.psnr(center, ref))
        vals["input_ssim"].append(losses.ssim(center, ref))
        st = K.frame_weight_stats(out["kernels"])
        avgs.append(st["avg"])
        maxs.append(st["max"])
    rec = {"loss": float(np.mean(vals["loss"]))}
    for key in ("psnr", "ssim", "input_psnr", "input_ssim"):
        a = np.array(vals[key], dtype=np.float64)
        rec[key] = {"min": float(a.min()), "avg": float(a.mean()), "max": float(a.max())}
    rec["frame_weights"] = {"avg": [float(v) for v in np.mean(avgs, axis=0)],
                            "max": [float(v) for v in np.max(maxs, axis=0)]}
    return rec


def _snapshot(model):
    return {n: p.data.copy() for n, p in model.named_parameters().items()}


def _restore(model, snap):
    for n, p in model.named_parameters().items():
        p.data = snap[n].copy()


def save_trainer_state(path, opt: Adam, step: int, cfg: TrainConfig):
    os.makedirs(path, exist_ok=True)
    rtf.write_many(os.path.join(path, "optimizer.rtf"), opt.state())
    with open(os.path.join(path, "trainer.json"), "w") as fh:
        json.dump({"step": step, "train_config": cfg.to_dict()}, fh, indent=2, sort_keys=True)


def load_trainer_state(path):
    with open(os.path.join(path, "trainer.json")) as fh:
        info = json.load(fh)
    return info["step"], rtf.read_many(os.path.join(path, "optimizer.rtf"))


def train(model: M.Model, dataset: list[TrainSample], val_dataset: list[TrainSample] | None,
          cfg: TrainConfig, out_dir=None, resume: str | None = None, on_step=None):
    """Two-phase training; returns (model loaded with the best checkpoint, TrainLog).

    Phase one uses ``cfg.loss``; the last ``phase2_frac`` of the steps adds a
    combined-output term weighted ``phase2_global``. With ``out_dir`` set,
    step records stream to ``train_log.jsonl`` and checkpoints go to
    ``best/`` and ``last/``.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    dataset = [dataset[i] for i in canonical_order(dataset)]
    val_dataset = val_dataset or []
    params = model.parameters()
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    tlog = TrainLog()
    start = 0
    if resume:
        start, st = load_trainer_state(resume)
        opt.load_state(st)
        prev = os.path.join(resume, "..", "val_log.jsonl")
        if os.path.exists(prev):
            with open(prev) as fh:
                for line in fh:
                    rec = json.loads(line)
                    tlog.validations.append(rec)
                    if rec["val"]["loss"] < tlog.best_loss:
                        tlog.best_loss, tlog.best_step = rec["val"]["loss"], rec["step"]
    best = _snapshot(model) if start == 0 else None
    log_fh = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "train_log.jsonl"), "a" if resume else "w")
        if not resume:
            open(os.path.join(out_dir, "val_log.jsonl"), "w").close()
    try:
        for step in range(start, cfg.steps):
            window, ref, idx = make_batch(dataset, step, cfg)
            loss_cfg = cfg.loss_at(step)
            T.Tape.clear()
            model.zero_grad()
            loss, terms, _ = loss_on(model, window, ref, loss_cfg)
            value = float(loss.data)
            if not np.isfinite(value):
                T.Tape.clear()
                raise NonFiniteLoss(step + 1, terms)
            T.backward(loss)
            gnorm = clip_grad_norm(params, cfg.clip_norm)
            if not np.isfinite(gnorm):
                raise NonFiniteLoss(step + 1, dict(terms, grad_norm=gnorm))
            opt.step()
            rec = {"step": step + 1, "loss": value, "terms": terms, "grad_norm": gnorm,
                   "phase": 2 if step >= cfg.phase2_start() else 1,
                   "samples": [int(i) for i in idx]}
            tlog.steps.append(rec)
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
            if on_step:
                on_step(rec)
            last = step + 1 == cfg.steps
            if val_dataset and ((step + 1) % cfg.val_every == 0 or last):
                v = validate(model, val_dataset, cfg.loss)
                vrec = {"step": step + 1, "val": v}
                tlog.validations.append(vrec)
                log.info("step %d loss %.4f val %.4f psnr %.2f", step + 1, value, v["loss"],
                         v["psnr"]["avg"])
                if out_dir:
                    with open(os.path.join(out_dir, "val_log.jsonl"), "a") as fh:
                        fh.write(json.dumps(vrec) + "\n")
                if v["loss"] < tlog.best_loss:
                    tlog.best_loss, tlog.best_step = v["loss"], step + 1
                    best = _snapshot(model)
                    if out_dir:
                        M.save(model, os.path.join(out_dir, "best"), {"step": step + 1})
            if out_dir and last:
                M.save(model, os.path.join(out_dir, "last"), {"step": step + 1})
                save_trainer_state(os.path.join(out_dir, "last"), opt, step + 1, cfg)
    finally:
        if log_fh:
            log_fh.close()
        T.Tape.clear()
    if not val_dataset:
        best = _snapshot(model)
        tlog.best_step = cfg.steps
        if out_dir:
            M.save(model, os.path.join(out_dir, "best"), {"step": cfg.steps})
    elif best is not None:
        _restore(model, best)
    elif out_dir and os.path.isdir(os.path.join(out_dir, "best")):
        _restore(model, _snapshot(M.load(os.path.join(out_dir, "best"))))
    return model, tlog


# -- ablation ---------------------------------------------------------------------------


ABLATION_ROWS = [
    ("RA + spatial loss", "desk-tiny", "spatial"),
    ("RA + temporal loss", "desk-tiny", "temporal"),
    ("tKPCN + spatial loss", "desk-tkpcn", "spatial"),
    ("tKPCN + temporal loss", "desk-tkpcn", "temporal"),
]


def loss_preset(name: str) -> LossConfig:
    if name == "spatial":
        return LossConfig.spatial()
    if name == "temporal":
        return LossConfig()
    raise ValueError(f"unknown loss preset {name!r}")


def ablate(rows, dataset, val_dataset, cfg: TrainConfig, model_seed: int = 0,
           stats_dataset=None, dtype=np.float32, model_overrides=None) -> list[dict]:
    """Train each (name, model preset, loss preset) row under identical seeds and steps."""
    if len(rows) < 2:
        raise ValueError("ablation needs at least two configurations")
    stats_dataset = stats_dataset or val_dataset or dataset
    out = []
    for name, mname, lname in rows:
        mcfg = M.preset(mname, **(model_overrides or {}))
        model = M.build(mcfg, model_seed, dtype)
        tcfg = replace(cfg, loss=loss_preset(lname), post_train=False)
        model, tlog = train(model, dataset, None, tcfg)
        v = validate(model, stats_dataset, tcfg.loss)
        out.append({"name": name, "model": mname, "loss": lname,
                    "avg": v["frame_weights"]["avg"], "max": v["frame_weights"]["max"],
                    "psnr": v["psnr"]["avg"], "ssim": v["ssim"]["avg"],
                    "final_train_loss": float(tlog.losses()[-1])})
    return out


def off_center_mass(row: dict) -> float:
    avg = row["avg"]
    r = len(avg) // 2
    return float(sum(a for i, a in enumerate(avg) if i != r))


def format_ablation(rows: list[dict]) -> str:
    """Tab-separated table: two lines (avg, max) per configuration."""
    t = len(rows[0]["avg"])
    r = t // 2
    head = "\t".join(["config", "stat"] + [f"{i - r:+d}" if i != r else "0" for i in range(t)])
    lines = [head]
    for row in rows:
        for stat in ("avg", "max"):
            vals = "\t".join(f"{v:.4f}" for v in row[stat])
            lines.append(f"{row['name']}\t{stat}\t{vals}")
    return "\n".join(lines) + "\n"
