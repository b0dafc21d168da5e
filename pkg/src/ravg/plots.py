"""Figures and previews written next to the delimited reports."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _offsets(n):
    r = n // 2
    return [i - r for i in range(n)]


def srgb8(image: np.ndarray) -> np.ndarray:
    """[3,H,W] linear color -> [H,W,3] uint8 sRGB, clipped to [0, 1]."""
    x = np.clip(np.asarray(image, dtype=np.float64), 0, 1)
    x = np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)
    return np.round(np.moveaxis(x, 0, -1) * 255).astype(np.uint8)


def save_preview(image: np.ndarray, path) -> None:
    img = np.asarray(image)
    if img.ndim == 2:
        img = np.repeat(img[None], 3, axis=0)
    plt.imsave(path, srgb8(img))


def frame_weights(avg, mx, path, title="Kernel mass per frame"):
    off = _offsets(len(avg))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 2.6))
        x = np.arange(len(avg))
        ax.bar(x - 0.2, avg, width=0.4, label="avg")
        ax.bar(x + 0.2, mx, width=0.4, label="max")
        ax.set_xticks(x, [f"{o:+d}" if o else "0" for o in off])
        ax.set_xlabel("frame offset")
        ax.set_ylabel("weight sum")
        ax.set_ylim(0, 1.05)
        ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def contributions(contrib: np.ndarray, path, noisy=None, denoised=None):
    """Per-frame kernel mass images, optionally preceded by noisy/denoised."""
    panels = []
    if noisy is not None:
        panels.append(("noisy", srgb8(noisy), None))
    if denoised is not None:
        panels.append(("denoised", srgb8(denoised), None))
    for o, c in zip(_offsets(len(contrib)), contrib):
        panels.append((f"frame {o:+d}" if o else "frame 0", c, "magma"))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(panels), figsize=(1.7 * len(panels), 1.9))
        for ax, (name, img, cmap) in zip(np.atleast_1d(axes), panels):
            if cmap:
                ax.imshow(img, cmap=cmap, vmin=0, vmax=1)
            else:
                ax.imshow(img)
            ax.set_title(name)
            ax.axis("off")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def training_curves(steps, validations, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.6, 2.8))
        s = np.array([r["step"] for r in steps])
        y = np.array([r["loss"] for r in steps])
        ax.plot(s, y, lw=0.6, alpha=0.5, label="train")
        if len(y) >= 20:
            k = max(len(y) // 50, 5)
            smooth = np.convolve(y, np.ones(k) / k, mode="valid")
            ax.plot(s[k - 1:], smooth, lw=1.2, label=f"train ({k}-step mean)")
        if validations:
            ax.plot([v["step"] for v in validations], [v["val"]["loss"] for v in validations],
                    "o-", ms=3, label="validation")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def ablation(rows, path):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(7.5, 2.8), sharey=True)
        n = len(rows[0]["avg"])
        x = np.arange(n)
        width = 0.8 / len(rows)
        for stat, ax in zip(("avg", "max"), axes):
            for i, row in enumerate(rows):
                ax.bar(x - 0.4 + width * (i + 0.5), row[stat], width=width, label=row["name"])
            ax.set_xticks(x, [f"{o:+d}" if o else "0" for o in _offsets(n)])
            ax.set_title(stat)
            ax.set_xlabel("frame offset")
        axes[0].set_ylabel("weight sum")
        axes[1].legend(frameon=False, loc="upper right")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
