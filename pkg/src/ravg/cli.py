"""Command-line entry point: ``ravg gen-data | train | denoise | stats | metrics``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import kernels as K
from . import losses
from . import model as M
from . import plots
from . import rtf
from . import synth
from . import train as TR

log = logging.getLogger("ravg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(prog):
    return argparse.ArgumentDefaultsHelpFormatter(prog, max_help_position=32, width=100)


def _positive(kind):
    def conv(s):
        v = kind(s)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {s}")
        return v
    return conv


def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {s}")
    return v


def _window(s):
    v = int(s)
    if v < 3 or v % 2 == 0:
        raise argparse.ArgumentTypeError(f"window must be odd and >= 3, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ravg", description="Temporal kernel-predicting denoiser with robust-average blocks.",
                formatter_class=_fmt)
    p.add_argument("-v", "--verbose", action="store_true", default=False, help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-data", help="render a synthetic training dataset", formatter_class=_fmt)
    g.add_argument("--scene", default=",".join(synth.SUITE),
                   help="comma-separated scene presets or a scene JSON file "
                        f"(presets: {', '.join(sorted(synth.PRESETS))})")
    g.add_argument("--frames", type=_positive(int), default=24, help="frames per scene")
    g.add_argument("--spp", type=_positive(int), default=32, help="samples per pixel n of the noisy level")
    g.add_argument("--size", type=_positive(int), default=64, help="frame width and height in pixels")
    g.add_argument("--window", type=_window, default=5, help="temporal window length 2k+1")
    g.add_argument("--tile", type=_nonneg_int, default=0, help="tile size for training samples (0 = whole frame)")
    g.add_argument("--sigma-s", type=float, default=synth.Scene.sigma_s, help="std of the per-sample light factor")
    g.add_argument("--p-ff", type=float, default=synth.Scene.p_ff, help="per-sample firefly probability")
    g.add_argument("--i-ff", type=float, default=synth.Scene.i_ff, help="firefly intensity")
    g.add_argument("--sequence", default="half", choices=["none", "low", "half", "noisy"],
                   help="also render each full scene at this noise level for inference")
    g.add_argument("--seed", type=int, default=0, help="master seed")
    g.add_argument("--png", action="store_true", default=False, help="write 8-bit sRGB previews")
    g.add_argument("--out", default="data", help="output dataset directory")

    t = sub.add_parser("train", help="train a model on a generated dataset", formatter_class=_fmt)
    t.add_argument("--data", default="data", help="training dataset directory")
    t.add_argument("--val", default="", help="validation dataset directory (empty = hold out every 10th sample)")
    t.add_argument("--config", default="desk-tiny",
                   help=f"model preset ({', '.join(M.PRESETS)}) or model config JSON")
    t.add_argument("--loss", default="temporal", choices=["temporal", "spatial"], help="training loss")
    t.add_argument("--steps", type=_positive(int), default=2000, help="total optimization steps")
    t.add_argument("--batch", type=_positive(int), default=2, help="windows per step")
    t.add_argument("--lr", type=_positive(float), default=1e-3, help="step size")
    t.add_argument("--crop", type=_nonneg_int, default=32, help="random crop size (0 = full sample)")
    t.add_argument("--phase2-frac", type=float, default=0.2, help="fraction of steps with the combined-output term")
    t.add_argument("--no-post-train", action="store_true", default=False, help="skip the second phase")
    t.add_argument("--val-every", type=_positive(int), default=100, help="validation cadence in steps")
    t.add_argument("--kernel-threshold", type=float, default=None, help="kernel threshold t (None = 1/(2K))")
    t.add_argument("--seed", type=int, default=0, help="sampler seed")
    t.add_argument("--model-seed", type=int, default=0, help="parameter init seed")
    t.add_argument("--resume", default="", help="checkpoint directory with optimizer state (e.g. RUN/last)")
    t.add_argument("--ablate", default="", choices=["", "ra-vs-tkpcn"],
                   help="train the four-row ablation instead of a single model")
    t.add_argument("--out", default="run", help="output directory")

    d = sub.add_parser("denoise", help="denoise a rendered sequence", formatter_class=_fmt)
    _inference_flags(d)
    d.add_argument("--passes", type=_positive(int), default=1, help="denoising passes")
    d.add_argument("--aov", default="", help="RTF [F,C,H,W] buffer filtered with the color kernels")
    d.add_argument("--out", default="denoised", help="output directory")

    s = sub.add_parser("stats", help="per-frame kernel weight breakdown", formatter_class=_fmt)
    _inference_flags(s)
    s.add_argument("--out", default="stats", help="output directory")

    m = sub.add_parser("metrics", help="PSNR/SSIM between two RTF images or stacks", formatter_class=_fmt)
    m.add_argument("a", help="test RTF file")
    m.add_argument("b", help="reference RTF file")
    m.add_argument("--out", default="", help="also write JSON lines here")
    return p


def _inference_flags(p):
    p.add_argument("--checkpoint", default="run/best", help="checkpoint directory")
    p.add_argument("--input", default="data/sequences/pan-checker", help="sequence directory")
    p.add_argument("--kernel-threshold", type=float, default=None, help="kernel threshold t (None = checkpoint value)")
    p.add_argument("--kernel-size", default="", help="required spatial kernel size, e.g. 3x3 (empty = checkpoint)")
    p.add_argument("--png", action="store_true", default=False, help="write 8-bit sRGB previews and figures")


# -- helpers ---------------------------------------------------------------------------


def _mkdir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise DataError(f"{path} is not writable")


def _jsonl(path, records):
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _json_num(x):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def _load_model(args):
    expect = {}
    if args.kernel_size:
        try:
            kh, kw = (int(v) for v in args.kernel_size.lower().split("x"))
        except ValueError:
            raise UsageError(f"--kernel-size must look like 3x3, got {args.kernel_size!r}") from None
        expect = {"kh": kh, "kw": kw}
    model = M.load(args.checkpoint, expect)
    if args.kernel_threshold is not None:
        taps = model.config.taps
        if not 0 <= args.kernel_threshold < 1 / taps:
            raise UsageError(f"--kernel-threshold must be in [0, 1/K) = [0, {1 / taps:.6g})")
    return model


def _load_sequence(path, model):
    seq = synth.read_sequence(path)
    need = model.config.frames
    if len(seq.rgb) < need:
        raise DataError(f"sequence has {len(seq.rgb)} frames, the model window needs {need}")
    if seq.k < model.config.k:
        raise DataError(f"sequence stores flows for k={seq.k}, the model needs k={model.config.k}")
    return seq


# -- subcommands -----------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.frames < args.window:
        raise UsageError(f"--frames {args.frames} is shorter than --window {args.window}")
    if args.sigma_s < 0 or not 0 <= args.p_ff <= 1 or args.i_ff < 0:
        raise UsageError("--sigma-s and --i-ff must be >= 0 and --p-ff in [0, 1]")
    _mkdir(args.out)
    k = args.window // 2
    specs = [s for s in args.scene.split(",") if s] if not args.scene.endswith(".json") else [args.scene]
    samples, scenes = [], []
    for si, spec in enumerate(specs):
        try:
            scene = synth.load_scene(spec, width=args.size, height=args.size, n_frames=args.frames,
                                     seed=synth.derive_seed(args.seed, si), sigma_s=args.sigma_s,
                                     p_ff=args.p_ff, i_ff=args.i_ff)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        except OSError as exc:
            raise DataError(f"cannot read scene {spec}: {exc}") from None
        if scene.n_frames < args.window:
            raise UsageError(f"scene {scene.name} has fewer frames than the window")
        log.info("rendering %s", scene.name)
        scenes.append(scene)
        samples.extend(synth.scene_samples(scene, k, synth.derive_seed(args.seed, si, 1), n=args.spp))
    records = synth.dataset_write(samples, args.out, args.tile)
    with open(os.path.join(args.out, "scenes.json"), "w") as fh:
        json.dump([s.to_dict() for s in scenes], fh, indent=2, sort_keys=True)
    if args.sequence != "none":
        for si, scene in enumerate(scenes):
            seq = synth.render_sequence(scene, synth.level_spp(args.sequence, args.spp),
                                        synth.derive_seed(args.seed, si, 2), k)
            path = os.path.join(args.out, "sequences", scene.name)
            synth.write_sequence(seq, path)
            if args.png:
                for i, img in enumerate(seq.rgb):
                    plots.save_preview(img, os.path.join(path, f"f{i:04d}", "rgb.png"))
    if args.png:
        for rec in records:
            d = os.path.join(args.out, rec["id"])
            inp = rtf.read(os.path.join(d, "input.rtf"))
            plots.save_preview(inp[len(inp) // 2, :3], os.path.join(d, "input.png"))
            plots.save_preview(rtf.read(os.path.join(d, "target.rtf")), os.path.join(d, "target.png"))
    print(f"wrote {len(records)} samples to {args.out}")
    return EXIT_OK


def _model_config(spec, threshold):
    if spec.endswith(".json"):
        try:
            with open(spec) as fh:
                cfg = M.ModelConfig.from_dict(json.load(fh))
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read model config {spec}: {exc}") from None
    elif spec in M.PRESETS:
        cfg = M.preset(spec)
    else:
        raise UsageError(f"unknown model config {spec!r}")
    if threshold is not None:
        cfg.threshold = threshold
    problems = cfg.problems()
    if problems:
        raise UsageError("; ".join(problems))
    return cfg


def _split(data, val_path):
    if val_path:
        return data, synth.dataset_read(val_path)
    if len(data) < 2:
        raise DataError("need at least two samples to hold out a validation set")
    if len(data) < 10:
        return data[:-1], data[-1:]
    trn = [s for i, s in enumerate(data) if i % 10 != 9]
    val = [s for i, s in enumerate(data) if i % 10 == 9]
    return trn, val


def cmd_train(args) -> int:
    data = synth.dataset_read(args.data)
    if not data:
        raise DataError(f"{args.data} holds no samples")
    trn, val = _split(data, args.val)
    mcfg = _model_config(args.config, args.kernel_threshold)
    if trn[0].frames != mcfg.frames:
        raise DataError(f"dataset windows have {trn[0].frames} frames, model expects {mcfg.frames}")
    tcfg = TR.TrainConfig(steps=args.steps, batch=args.batch, lr=args.lr, loss=TR.loss_preset(args.loss),
                          val_every=args.val_every, seed=args.seed, post_train=not args.no_post_train,
                          phase2_frac=args.phase2_frac, crop=args.crop)
    _mkdir(args.out)
    if args.ablate:
        rows = TR.ablate(TR.ABLATION_ROWS, trn, val, tcfg, model_seed=args.model_seed,
                         model_overrides={"threshold": mcfg.threshold})
        with open(os.path.join(args.out, "ablation.tsv"), "w") as fh:
            fh.write(TR.format_ablation(rows))
        _jsonl(os.path.join(args.out, "ablation.jsonl"), rows)
        plots.ablation(rows, os.path.join(args.out, "ablation.png"))
        sys.stdout.write(TR.format_ablation(rows))
        return EXIT_OK
    if args.resume:
        model = M.load(args.resume)
        if model.config.to_dict() != mcfg.to_dict():
            raise DataError("resume checkpoint config differs from --config")
    else:
        model = M.build(mcfg, args.model_seed)
    with open(os.path.join(args.out, "config.json"), "w") as fh:
        json.dump({"model": mcfg.to_dict(), "train": tcfg.to_dict(), "data": args.data,
                   "val": args.val, "train_samples": len(trn), "val_samples": len(val)},
                  fh, indent=2, sort_keys=True)
    model, tlog = TR.train(model, trn, val, tcfg, out_dir=args.out, resume=args.resume or None)
    steps = []
    with open(os.path.join(args.out, "train_log.jsonl")) as fh:
        steps = [json.loads(line) for line in fh]
    if steps:
        plots.training_curves(steps, tlog.validations, os.path.join(args.out, "loss.png"))
    if tlog.validations:
        v = [r for r in tlog.validations if r["step"] == tlog.best_step]
        best = v[0]["val"] if v else tlog.validations[-1]["val"]
        print(f"best step {tlog.best_step}: val loss {best['loss']:.4f}, "
              f"psnr {best['input_psnr']['avg']:.2f} -> {best['psnr']['avg']:.2f} dB, "
              f"ssim {best['input_ssim']['avg']:.4f} -> {best['ssim']['avg']:.4f}")
    else:
        print(f"trained {len(tlog.steps)} steps")
    return EXIT_OK


def cmd_denoise(args) -> int:
    model = _load_model(args)
    seq = _load_sequence(args.input, model)
    aov = None
    if args.aov:
        aov = rtf.read(args.aov)
        if aov.ndim != 4 or aov.shape[0] != len(seq.rgb) or aov.shape[2:] != seq.rgb.shape[2:]:
            raise DataError(f"AOV shape {aov.shape} does not match the sequence {seq.rgb.shape}")
    res = M.denoise_sequence(model, seq, passes=args.passes, threshold=args.kernel_threshold,
                             aov=aov, return_kernels=True)
    _mkdir(args.out)
    den = res["denoised"]
    rtf.write(os.path.join(args.out, "denoised.rtf"), den.astype(np.float32), "denoised")
    if aov is not None:
        rtf.write(os.path.join(args.out, "aov.rtf"), res["aov"].astype(np.float32), "aov")
    records = []
    for i, kf in enumerate(res["kernels"]):
        st = K.frame_weight_stats(kf)
        rec = {"frame": i, "clamped": bool(res["clamped"][i]),
               "frame_weights_avg": list(st["avg"]), "frame_weights_max": list(st["max"])}
        if seq.ground_truth is not None:
            gt = seq.ground_truth[i]
            rec.update(psnr=_json_num(losses.psnr(den[i], gt)), ssim=losses.ssim(den[i], gt),
                       input_psnr=_json_num(losses.psnr(seq.rgb[i], gt)), input_ssim=losses.ssim(seq.rgb[i], gt))
        records.append(rec)
    _jsonl(os.path.join(args.out, "metrics.jsonl"), records)
    if args.png:
        for i, img in enumerate(den):
            plots.save_preview(img, os.path.join(args.out, f"f{i:04d}.png"))
    if seq.ground_truth is not None:
        pin = np.mean([losses.psnr(seq.rgb[i], seq.ground_truth[i]) for i in range(len(den))])
        pout = np.mean([losses.psnr(den[i], seq.ground_truth[i]) for i in range(len(den))])
        print(f"denoised {len(den)} frames: psnr {pin:.2f} -> {pout:.2f} dB")
    else:
        print(f"denoised {len(den)} frames")
    return EXIT_OK


def cmd_stats(args) -> int:
    model = _load_model(args)
    seq = _load_sequence(args.input, model)
    res = M.denoise_sequence(model, seq, threshold=args.kernel_threshold, return_kernels=True)
    _mkdir(args.out)
    records, contrib = [], []
    for i, kf in enumerate(res["kernels"]):
        st = K.frame_weight_stats(kf)
        records.append({"frame": i, "frame_weights_avg": list(st["avg"]),
                        "frame_weights_max": list(st["max"])})
        contrib.append(kf.per_frame()[0])
    contrib = np.stack(contrib).astype(np.float32)
    _jsonl(os.path.join(args.out, "stats.jsonl"), records)
    rtf.write(os.path.join(args.out, "contributions.rtf"), contrib, "contributions")
    avg = np.mean([r["frame_weights_avg"] for r in records], axis=0)
    mx = np.max([r["frame_weights_max"] for r in records], axis=0)
    with open(os.path.join(args.out, "summary.tsv"), "w") as fh:
        r = len(avg) // 2
        fh.write("stat\t" + "\t".join(f"{i - r:+d}" if i != r else "0" for i in range(len(avg))) + "\n")
        fh.write("avg\t" + "\t".join(f"{v:.4f}" for v in avg) + "\n")
        fh.write("max\t" + "\t".join(f"{v:.4f}" for v in mx) + "\n")
    if args.png:
        plots.frame_weights(avg, mx, os.path.join(args.out, "frame_weights.png"))
        for i in range(len(contrib)):
            plots.contributions(contrib[i], os.path.join(args.out, f"contrib_f{i:04d}.png"),
                                noisy=seq.rgb[i], denoised=res["denoised"][i])
    print("avg\t" + "\t".join(f"{v:.4f}" for v in avg))
    print("max\t" + "\t".join(f"{v:.4f}" for v in mx))
    return EXIT_OK


def cmd_metrics(args) -> int:
    a, b = rtf.read(args.a), rtf.read(args.b)
    if a.shape != b.shape or a.ndim not in (3, 4):
        raise DataError(f"shapes {a.shape} and {b.shape} are not comparable [C,H,W] or [F,C,H,W] images")
    if a.ndim == 3:
        a, b = a[None], b[None]
    records = [{"frame": i, "psnr": _json_num(losses.psnr(x, y)), "ssim": losses.ssim(x, y)}
               for i, (x, y) in enumerate(zip(a, b))]
    for r in records:
        print(json.dumps(r, sort_keys=True))
    if args.out:
        _jsonl(args.out, records)
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "denoise": cmd_denoise,
            "stats": cmd_stats, "metrics": cmd_metrics}


def _limit_threads():
    n = os.environ.get("RAVG_THREADS")
    if not n:
        return None
    try:
        n = int(n)
    except ValueError:
        raise UsageError(f"RAVG_THREADS must be an integer, got {n!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(n, 1))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help and parse errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limiter = _limit_threads()
        try:
            return COMMANDS[args.command](args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except UsageError as exc:
        print(f"ravg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (K.KernelConfigError, M.ModelConfigError) as exc:
        print(f"ravg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TR.NonFiniteLoss as exc:
        print(f"ravg {args.command}: numeric failure at step {exc.step}: {exc.terms}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"ravg {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, synth.DatasetError, M.CheckpointError, rtf.RTFError, OSError) as exc:
        print(f"ravg {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
