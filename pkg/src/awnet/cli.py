"""Command-line surface: simulate, train, synthesize, eval, align, plot.

Exit codes: 0 success, 2 bad arguments or configuration, 3 I/O failure,
4 contract/invariant violation.  Every subcommand accepts ``--config
FILE`` (JSON); explicit command-line flags win over config-file values,
which win over defaults.  ``--dry-run`` prints the resolved configuration
and exits without doing work.  Commands never mutate their input
directories.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import align as align_mod
from . import io as io_mod
from . import metrics as metrics_mod
from .datamodel import Frame, VideoSequence
from .errors import ConfigError, PipelineError
from .fusion import MULTI_REFERENCE, SINGLE_REFERENCE
from .model import ModelBundle, load_model, save_model
from .recurrent import SynthesisContext, synthesize_sequence
from .simulator import DegradationConfig, make_hsr_lfr, make_lsr_hfr
from .training import (
    STEP_FLOW,
    STEP_FUSION,
    STEP_JOINT,
    PairSampler,
    TrainConfig,
    create_train_state,
    load_train_state,
    pretrain_flow,
    save_train_state,
    train_step1_flow,
    train_step2_fusion,
    train_step3_joint,
    write_loss_csv,
)

EXIT_OK = 0
EXIT_BAD_ARGS = 2
EXIT_IO = 3
EXIT_INVARIANT = 4

STEP_ALIASES = {"flow": STEP_FLOW, "fusion": STEP_FUSION, "joint": STEP_JOINT}
MODE_ALIASES = {"single": SINGLE_REFERENCE, "multi": MULTI_REFERENCE}


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge defaults < config file < explicit CLI flags."""
    cfg = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            file_cfg = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {config_path} is not valid JSON: {e}") from e
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _dry_run(args, resolved: dict, plan: list[str] | None = None) -> bool:
    if getattr(args, "dry_run", False):
        print(json.dumps(resolved, indent=2, default=str))
        if plan:
            for line in plan:
                print(line)
        return True
    return False


def _set_threads(args) -> None:
    threads = getattr(args, "threads", None)
    if threads:
        torch.set_num_threads(int(threads))


def cmd_simulate(args) -> int:
    defaults = {
        "gt": None,
        "out_hsr": None,
        "out_lsr": None,
        "n": 4,
        "m": 8,
        "exposure_frames": 1,
        "noise_var": 0.0,
        "seed": 0,
        "parallax": None,
        "color_space": "srgb8",
    }
    cfg = _resolve(args, defaults)
    for key in ("gt", "out_hsr", "out_lsr"):
        if not cfg[key]:
            raise ConfigError(f"simulate requires --{key.replace('_', '-')}")
    homography = None
    if cfg["parallax"]:
        homography = np.asarray(json.loads(Path(cfg["parallax"]).read_text()), dtype=np.float64)
    deg = DegradationConfig(
        n=int(cfg["n"]),
        m=int(cfg["m"]),
        exposure_frames=int(cfg["exposure_frames"]),
        noise_variance=float(cfg["noise_var"]),
        parallax_homography=homography,
        seed=int(cfg["seed"]),
    )
    if _dry_run(args, {**cfg, "degradation": deg.to_dict()}):
        return EXIT_OK
    gt = io_mod.load_sequence(cfg["gt"])
    hsr = make_hsr_lfr(gt, deg)
    lsr = make_lsr_hfr(gt, deg)
    for out_dir, seq in ((cfg["out_hsr"], hsr), (cfg["out_lsr"], lsr)):
        io_mod.save_sequence(out_dir, seq, cfg["color_space"])
        (Path(out_dir) / "simulate_config.json").write_text(
            json.dumps(deg.to_dict(), indent=2)
        )
    print(f"wrote {len(hsr)} camera frames to {cfg['out_hsr']}, "
          f"{len(lsr)} low-res frames to {cfg['out_lsr']}")
    return EXIT_OK


def _load_clips(data_dir) -> list[VideoSequence]:
    root = Path(data_dir)
    if (root / "manifest.json").is_file():
        return [io_mod.load_sequence(root)]
    clips = [
        io_mod.load_sequence(sub)
        for sub in sorted(root.iterdir())
        if sub.is_dir() and (sub / "manifest.json").is_file()
    ]
    if not clips:
        raise FileNotFoundError(f"no sequence directories under {data_dir}")
    return clips


def cmd_train(args) -> int:
    defaults = {
        "step": "all",
        "data": None,
        "noise_var": 0.0,
        "iters": None,
        "seed": 0,
        "resume": None,
        "out": None,
        "batch_size": 4,
        "crop": "256x384",
        "n": 4,
        "mode": "single",
        "head": "awfusion",
        "loss_csv": None,
        "export_model": None,
        "pretrain_iters": None,
    }
    cfg = _resolve(args, defaults)
    if cfg["mode"] not in MODE_ALIASES:
        raise ConfigError(f"mode must be one of {sorted(MODE_ALIASES)}")
    if cfg["step"] != "all" and cfg["step"] not in STEP_ALIASES:
        raise ConfigError(f"step must be 'all' or one of {sorted(STEP_ALIASES)}")
    steps = [cfg["step"]] if cfg["step"] != "all" else ["flow", "fusion", "joint"]
    try:
        crop_h, crop_w = (int(v) for v in str(cfg["crop"]).lower().split("x"))
    except ValueError as e:
        raise ConfigError(f"crop must look like 256x384, got {cfg['crop']!r}") from e

    def step_cfg(step: str) -> TrainConfig:
        return TrainConfig(
            step=STEP_ALIASES[step],
            iterations=None if cfg["iters"] is None else int(cfg["iters"]),
            batch_size=int(cfg["batch_size"]),
            noise_variance=float(cfg["noise_var"]),
            crop=(crop_h, crop_w),
            scale_n=int(cfg["n"]),
            seed=int(cfg["seed"]),
            **(
                {"pretrain_iterations": int(cfg["pretrain_iters"])}
                if cfg["pretrain_iters"] is not None
                else {}
            ),
        )

    plan = [
        f"step {i + 1}: {name} -> {json.dumps(step_cfg(name).to_dict(), default=str)}"
        for i, name in enumerate(steps)
    ]
    if _dry_run(args, cfg, plan):
        return EXIT_OK
    if not cfg["data"]:
        raise ConfigError("train requires --data")
    if not cfg["out"]:
        raise ConfigError("train requires --out")

    clips = _load_clips(cfg["data"])
    mode = MODE_ALIASES[cfg["mode"]]
    if cfg["resume"]:
        state = load_train_state(cfg["resume"])
    else:
        state = create_train_state(seed=int(cfg["seed"]), mode=mode, head=cfg["head"])
    sampler = PairSampler(clips, n=int(cfg["n"]), crop=(crop_h, crop_w), mode=mode)

    last_cfg = None
    for name in steps:
        tc = step_cfg(name)
        last_cfg = tc
        if name == "flow":
            if not cfg["resume"] and state.iteration == 0:
                pretrain_flow(state, sampler, tc)
            train_step1_flow(state, sampler, tc)
        elif name == "fusion":
            train_step2_fusion(state, sampler, tc)
        else:
            train_step3_joint(state, sampler, tc)
        print(f"{name}: done at iteration {state.iteration}, "
              f"last loss {state.loss_history[-1]['loss']:.6f}")

    save_train_state(cfg["out"], state, last_cfg)
    if cfg["loss_csv"]:
        write_loss_csv(cfg["loss_csv"], state.loss_history)
    if cfg["export_model"]:
        bundle = ModelBundle(
            flow_net=state.flow_net,
            fusion_net=state.fusion_net,
            mode=state.mode,
            noise_variance=float(cfg["noise_var"]),
            config=last_cfg.to_dict() if last_cfg else {},
        )
        save_model(cfg["export_model"], bundle)
    return EXIT_OK


def load_any_model(path) -> ModelBundle:
    """Accept either a model bundle or a training-state checkpoint."""
    from .checkpoint import load_tensors

    _, meta = load_tensors(path)
    if meta.get("kind") == "model":
        return load_model(path)
    state = load_train_state(path)
    noise = (meta.get("config") or {}).get("noise_variance", 0.0)
    return ModelBundle(
        flow_net=state.flow_net,
        fusion_net=state.fusion_net,
        mode=state.mode,
        noise_variance=float(noise),
        config=meta.get("config") or {},
    )


def cmd_synthesize(args) -> int:
    defaults = {
        "hsr": None,
        "lsr": None,
        "ckpt": None,
        "out": None,
        "emit_weight_maps": False,
        "upscaler": "bicubic",
        "color_space": "srgb8",
        "seed": 0,
    }
    cfg = _resolve(args, defaults)
    if _dry_run(args, cfg):
        return EXIT_OK
    for key in ("hsr", "lsr", "ckpt", "out"):
        if not cfg[key]:
            raise ConfigError(f"synthesize requires --{key}")
    bundle = load_any_model(cfg["ckpt"])
    upscaler = bundle.upscaler if cfg["upscaler"] == "learned" else "bicubic"
    if cfg["upscaler"] == "learned" and upscaler is None:
        raise ConfigError("checkpoint has no learned upscaler")
    ctx = SynthesisContext(
        flow_estimator=bundle.flow_net,
        fusion_net=bundle.fusion_net,
        upscaler=upscaler,
        mode=bundle.mode,
    )
    hsr = io_mod.load_sequence(cfg["hsr"])
    lsr = io_mod.load_sequence(cfg["lsr"])
    result = synthesize_sequence(hsr, lsr, ctx, collect_weight_maps=bool(cfg["emit_weight_maps"]))
    io_mod.save_sequence(cfg["out"], result.video, cfg["color_space"])
    if cfg["emit_weight_maps"] and result.weight_maps is not None:
        wdir = Path(cfg["out"]) / "weights"
        wdir.mkdir(parents=True, exist_ok=True)
        for i, wmap in enumerate(result.weight_maps):
            if wmap is not None:
                io_mod.save_gray_png(wdir / io_mod.FRAME_PATTERN.format(i + 1), wmap)
    print(f"wrote {len(result.video)} frames to {cfg['out']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    defaults = {
        "gt": None,
        "output": None,
        "label": "method",
        "method": None,
        "weight_maps": None,
        "out_report": None,
        "out_csv": None,
        "out_md": None,
    }
    cfg = _resolve(args, defaults)
    if _dry_run(args, cfg):
        return EXIT_OK
    if not cfg["gt"]:
        raise ConfigError("eval requires --gt")
    gt = io_mod.load_sequence(cfg["gt"])
    methods: dict[str, VideoSequence] = {}
    if cfg["output"]:
        methods[cfg["label"]] = io_mod.load_sequence(cfg["output"])
    for spec_str in cfg["method"] or []:
        if "=" not in spec_str:
            raise ConfigError(f"--method must look like label=DIR, got {spec_str!r}")
        label, path = spec_str.split("=", 1)
        methods[label] = io_mod.load_sequence(path)
    if not methods:
        raise ConfigError("eval needs --output or at least one --method")

    weight_maps = None
    if cfg["weight_maps"]:
        wdir = Path(cfg["weight_maps"])
        weight_maps = []
        for i in range(len(gt)):
            p = wdir / io_mod.FRAME_PATTERN.format(i + 1)
            weight_maps.append(io_mod.load_gray_png(p) if p.is_file() else None)

    first_label = next(iter(methods))
    report = metrics_mod.evaluate(
        methods[first_label], gt, method=first_label, weight_maps=weight_maps
    )
    if cfg["out_report"]:
        report.save(cfg["out_report"])
    print(f"{first_label}: mean PSNR {report.mean_psnr:.2f} dB, mean SSIM {report.mean_ssim:.4f}"
          + (f", mean W {report.mean_weight:.4f}" if report.mean_weight is not None else ""))
    if len(methods) > 1:
        table = metrics_mod.compare(gt, methods)
        if cfg["out_csv"]:
            Path(cfg["out_csv"]).write_text(table.to_csv())
        if cfg["out_md"]:
            Path(cfg["out_md"]).write_text(table.to_markdown())
        print(table.to_markdown())
    return EXIT_OK


def cmd_align(args) -> int:
    defaults = {"pairs": None, "frame": None, "out_h": None, "out_frame": None}
    cfg = _resolve(args, defaults)
    if _dry_run(args, cfg):
        return EXIT_OK
    if not cfg["pairs"]:
        raise ConfigError("align requires --pairs")
    pairs = io_mod.load_correspondences(cfg["pairs"])
    h = align_mod.estimate_homography(pairs)
    err = align_mod.reprojection_error(h, pairs)
    if cfg["out_h"]:
        Path(cfg["out_h"]).write_text(
            json.dumps({"homography": h.tolist(), "reprojection_error_px": err}, indent=2)
        )
    print(f"homography reprojection error: {err:.4f} px")
    if cfg["frame"]:
        if not cfg["out_frame"]:
            raise ConfigError("--frame needs --out-frame")
        frame = io_mod.load_frame_png(cfg["frame"])
        warped = align_mod.align_reference(frame, h)
        io_mod.save_frame_png(cfg["out_frame"], warped)
    return EXIT_OK


def cmd_plot(args) -> int:
    defaults = {"loss_csv": None, "report": None, "out": None}
    cfg = _resolve(args, defaults)
    if _dry_run(args, cfg):
        return EXIT_OK
    if not cfg["out"]:
        raise ConfigError("plot requires --out")
    if not cfg["loss_csv"] and not cfg["report"]:
        raise ConfigError("plot needs --loss-csv and/or --report")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n_axes = int(bool(cfg["loss_csv"])) + int(bool(cfg["report"]))
    fig, axes = plt.subplots(n_axes, 1, figsize=(8, 4 * n_axes), squeeze=False)
    row = 0
    if cfg["loss_csv"]:
        iters, losses = [], []
        lines = Path(cfg["loss_csv"]).read_text().strip().splitlines()[1:]
        for line in lines:
            parts = line.split(",")
            iters.append(int(parts[0]))
            losses.append(float(parts[1]))
        ax = axes[row][0]
        ax.plot(iters, losses, lw=0.8)
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        ax.set_title("training loss")
        row += 1
    if cfg["report"]:
        report = metrics_mod.EvalReport.load(cfg["report"])
        ax = axes[row][0]
        ax.plot(report.frame_psnr, marker="o", ms=3)
        ax.set_xlabel("frame")
        ax.set_ylabel("PSNR (dB)")
        ax.set_title(f"{report.method}: per-frame PSNR")
    fig.tight_layout()
    fig.savefig(cfg["out"])
    plt.close(fig)
    print(f"wrote {cfg['out']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="awnet",
        description="Dual-camera high spatiotemporal resolution video synthesis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; CLI flags take precedence")
        p.add_argument("--dry-run", action="store_true", help="print resolved config and exit")
        p.add_argument("--threads", type=int, help="cap worker/compute threads")

    p = sub.add_parser("simulate", help="degrade ground truth into dual camera streams")
    p.add_argument("--gt", help="ground-truth sequence directory")
    p.add_argument("--out-hsr", dest="out_hsr", help="output high-res low-rate directory")
    p.add_argument("--out-lsr", dest="out_lsr", help="output low-res high-rate directory")
    p.add_argument("--n", type=int, help="spatial downscale factor (2, 3, 4 or 8)")
    p.add_argument("--m", type=int, help="temporal subsample factor (group size)")
    p.add_argument("--exposure-frames", dest="exposure_frames", type=int,
                   help="frames averaged into one camera exposure")
    p.add_argument("--noise-var", dest="noise_var", type=float, help="low-res sensor noise variance")
    p.add_argument("--parallax", help="JSON file with a 3x3 homography for a second viewpoint")
    p.add_argument("--seed", type=int, help="noise seed")
    p.add_argument("--color-space", dest="color_space", choices=["srgb8", "srgb16"])
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="run the multi-step training recipe")
    p.add_argument("--step", choices=["flow", "fusion", "joint", "all"])
    p.add_argument("--data", help="directory of clip directories (or one clip)")
    p.add_argument("--noise-var", dest="noise_var", type=float,
                   help="noise regularization variance on the upscaled input")
    p.add_argument("--iters", type=int, help="iterations per step (default: desk-scale)")
    p.add_argument("--pretrain-iters", dest="pretrain_iters", type=int,
                   help="synthetic-warp flow initialization iterations")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="training-state checkpoint to continue from")
    p.add_argument("--out", help="training-state checkpoint to write")
    p.add_argument("--export-model", dest="export_model", help="also write a model bundle")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--crop", help="training crop, e.g. 256x384")
    p.add_argument("--n", type=int, help="spatial factor")
    p.add_argument("--mode", choices=["single", "multi"])
    p.add_argument("--head", choices=["awfusion", "convdp"])
    p.add_argument("--loss-csv", dest="loss_csv", help="write the loss log here")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synthesize", help="fuse two camera streams into one output")
    p.add_argument("--hsr", help="high-res low-rate sequence directory")
    p.add_argument("--lsr", help="low-res high-rate sequence directory")
    p.add_argument("--ckpt", help="model or training checkpoint")
    p.add_argument("--out", help="output sequence directory")
    p.add_argument("--emit-weight-maps", dest="emit_weight_maps", action="store_const",
                   const=True, help="write per-frame reference-weight PNGs under out/weights")
    p.add_argument("--upscaler", choices=["bicubic", "learned"])
    p.add_argument("--color-space", dest="color_space", choices=["srgb8", "srgb16"])
    p.add_argument("--seed", type=int)
    common(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("eval", help="score reconstructions against ground truth")
    p.add_argument("--gt", help="ground-truth sequence directory")
    p.add_argument("--output", help="reconstruction sequence directory")
    p.add_argument("--label", help="method label for --output")
    p.add_argument("--method", action="append", help="label=DIR, repeatable for comparisons")
    p.add_argument("--weight-maps", dest="weight_maps", help="weights/ directory from synthesize")
    p.add_argument("--out-report", dest="out_report", help="write the report JSON here")
    p.add_argument("--out-csv", dest="out_csv", help="write the comparison CSV here")
    p.add_argument("--out-md", dest="out_md", help="write the comparison markdown here")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("align", help="estimate a homography from correspondences")
    p.add_argument("--pairs", help="correspondence JSON: {\"pairs\": [[x,y,x2,y2],...]}")
    p.add_argument("--frame", help="optional reference PNG to warp")
    p.add_argument("--out-h", dest="out_h", help="write the homography JSON here")
    p.add_argument("--out-frame", dest="out_frame", help="write the warped frame here")
    common(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("plot", help="render loss curves and per-frame PSNR traces")
    p.add_argument("--loss-csv", dest="loss_csv", help="loss CSV from train")
    p.add_argument("--report", help="report JSON from eval")
    p.add_argument("--out", help="output image (.png or .svg)")
    common(p)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        _set_threads(args)
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_ARGS
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except PipelineError as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
