"""Multi-step training: flow fine-tuning, fusion pretraining, joint training.

The schedule mirrors the four-step recipe: the flow network is first
pretrained on synthetic random-warp pairs with an endpoint-error loss
(replacing an external pretrained model so the artifact is
self-contained), then fine-tuned with an L1 warping loss, then the fusion
network is trained alone, and finally both are trained jointly with
per-group learning rates.  Noise regularization adds Gaussian noise to
the upscaled low-resolution input; the noisy version feeds both networks
and the residual input is recomputed from it.

All randomness (batch sampling, crops, noise, synthetic warps) is drawn
from one numpy generator stored in the train state, so a fixed seed
reproduces loss curves bit-exactly on one platform, and a state
checkpoint resumes mid-run with identical subsequent losses.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import load_tensors, save_tensors
from .datamodel import (
    Frame,
    VideoSequence,
    add_gaussian_noise,
    apply_dynamic_filters,
    resize_bicubic,
    upsample_flow,
    warp_backward,
)
from .errors import ConfigError, CropError, ShapeError, TrainingDivergedError
from .flow import PyramidFlowNet, warp_loss
from .fusion import (
    MULTI_REFERENCE,
    SINGLE_REFERENCE,
    ConvDP,
    FusionNet,
    convdp_forward,
    extract_filters,
    extract_mask,
    fusion_forward,
    synthesize_multi,
    synthesize_single,
)
from .recurrent import LearnedUpscaler
from .simulator import TrainingTriple

STEP_FLOW = "flow_finetune"
STEP_FUSION = "fusion_pretrain"
STEP_JOINT = "joint"

# desk-scale defaults; the published recipe's counts are kept as metadata
DESK_ITERATIONS = {STEP_FLOW: 2000, STEP_FUSION: 5000, STEP_JOINT: 5000}
PAPER_ITERATIONS = {STEP_FLOW: 40000, STEP_FUSION: 100000, STEP_JOINT: 100000}
LEARNING_RATES = {STEP_FLOW: 1e-6, STEP_FUSION: 1e-4, STEP_JOINT: 1e-5}
JOINT_FLOW_LR = 3e-6
ADAM_BETAS = (0.9, 0.999)
PRETRAIN_ITERATIONS = 2000
PRETRAIN_LR = 1e-4


def cache_dir() -> Path:
    """Directory for intermediate artifacts (diagnostic checkpoints etc.)."""
    d = Path(os.environ.get("AWNET_CACHE", ".awnet_cache"))
    d.mkdir(parents=True, exist_ok=True)
    return d


@dataclass
class TrainConfig:
    """Hyperparameters for one training step."""

    step: str = STEP_FUSION
    iterations: Optional[int] = None  # default: desk-scale count for the step
    batch_size: int = 4
    learning_rate: Optional[float] = None  # default: published rate for the step
    flow_learning_rate: float = JOINT_FLOW_LR  # joint step only
    noise_variance: float = 0.0
    crop: tuple[int, int] = (256, 384)
    scale_n: int = 4
    seed: int = 0
    betas: tuple[float, float] = ADAM_BETAS
    pretrain_iterations: int = PRETRAIN_ITERATIONS

    def __post_init__(self):
        if self.step not in (STEP_FLOW, STEP_FUSION, STEP_JOINT):
            raise ConfigError(f"unknown training step {self.step!r}")
        if self.noise_variance < 0:
            raise ConfigError("noise_variance must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        # zero is tolerated so the no-op optimizer contract stays testable
        if self.resolved_lr < 0 or self.flow_learning_rate < 0:
            raise ConfigError("learning rates must be nonnegative")

    @property
    def resolved_iterations(self) -> int:
        return DESK_ITERATIONS[self.step] if self.iterations is None else self.iterations

    @property
    def resolved_lr(self) -> float:
        return LEARNING_RATES[self.step] if self.learning_rate is None else self.learning_rate

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "iterations": self.resolved_iterations,
            "batch_size": self.batch_size,
            "learning_rate": self.resolved_lr,
            "flow_learning_rate": self.flow_learning_rate,
            "noise_variance": self.noise_variance,
            "crop": list(self.crop),
            "scale_n": self.scale_n,
            "seed": self.seed,
            "betas": list(self.betas),
            "paper_iterations": PAPER_ITERATIONS[self.step],
        }


class PairSampler:
    """Uniform sampler of consecutive-frame training pairs from clips.

    Each draw picks a clip, a frame index j, and a crop window; the
    reference is frame j, the ground truth is frame j+1, and the low-res
    target is the cropped ground truth bicubic-downscaled by 1/n.  In
    two-reference mode frame j+2 supplies the far-side reference.
    """

    def __init__(
        self,
        clips: list[VideoSequence],
        n: int,
        crop: tuple[int, int],
        mode: str = SINGLE_REFERENCE,
    ):
        if not clips:
            raise ConfigError("dataset is empty")
        self.clips = clips
        self.n = n
        self.crop = crop
        self.mode = mode
        min_needed = 3 if mode == MULTI_REFERENCE else 2
        self.index = [
            (ci, j)
            for ci, clip in enumerate(clips)
            for j in range(len(clip) - (min_needed - 1))
        ]
        if not self.index:
            raise ConfigError("no usable frame pairs in the dataset")
        ch, cw = crop
        for clip in clips:
            h, w = clip.resolution
            if h < ch or w < cw:
                raise CropError(f"clip {h}x{w} smaller than crop {ch}x{cw}")
            if ch % n or cw % n:
                raise ConfigError(f"crop {crop} must be divisible by n={n}")

    def sample(self, rng: np.random.Generator) -> dict[str, torch.Tensor]:
        ci, j = self.index[int(rng.integers(0, len(self.index)))]
        clip = self.clips[ci]
        h, w = clip.resolution
        ch, cw = self.crop
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))

        def crop(frame: Frame) -> torch.Tensor:
            return frame.pixels[top : top + ch, left : left + cw]

        gt = crop(clip[j + 1])
        out = {
            "ref": crop(clip[j]),
            "gt": gt,
            "low": resize_bicubic(gt, Fraction(1, self.n)),
        }
        if self.mode == MULTI_REFERENCE:
            out["ref1"] = crop(clip[j + 2])
        return out


class TripleSampler:
    """Sampler over precomputed training triples, re-cropped on the fly."""

    def __init__(self, triples: list[TrainingTriple], crop: tuple[int, int]):
        if not triples:
            raise ConfigError("dataset is empty")
        self.triples = triples
        self.crop = crop
        self.n = triples[0].scale_factor
        self.mode = SINGLE_REFERENCE

    def sample(self, rng: np.random.Generator) -> dict[str, torch.Tensor]:
        t = self.triples[int(rng.integers(0, len(self.triples)))]
        cropped = augment(t, int(rng.integers(0, 2**31)), crop=self.crop)
        return {
            "ref": cropped.reference.pixels,
            "gt": cropped.ground_truth.pixels,
            "low": cropped.low_res_target.pixels,
        }


def augment(triple: TrainingTriple, seed: int, crop: tuple[int, int] = (256, 384)) -> TrainingTriple:
    """Crop reference and ground truth with one shared random window.

    The low-res target is re-derived by bicubic 1/n of the cropped ground
    truth ("crop then downscale"), so it is exactly 1/n of the crop.
    """
    ch, cw = crop
    h, w = triple.ground_truth.resolution
    if h < ch or w < cw:
        raise CropError(f"frames {h}x{w} smaller than crop {ch}x{cw}")
    n = triple.scale_factor
    if ch % n or cw % n:
        raise ConfigError(f"crop {crop} must be divisible by n={n}")
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    ref = triple.reference.pixels[top : top + ch, left : left + cw].clone()
    gt = triple.ground_truth.pixels[top : top + ch, left : left + cw].clone()
    return TrainingTriple(
        reference=Frame(ref, triple.reference.timestamp),
        low_res_target=Frame(resize_bicubic(gt, Fraction(1, n)), triple.ground_truth.timestamp),
        ground_truth=Frame(gt, triple.ground_truth.timestamp),
    )


def rec_loss(y: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Reconstruction loss: mean absolute error over pixels and channels."""
    if y.shape != gt.shape:
        raise ShapeError(f"shape mismatch {tuple(y.shape)} vs {tuple(gt.shape)}")
    return (y - gt).abs().mean()


@dataclass
class TrainState:
    """Networks, optimizer, RNG and bookkeeping for a training run."""

    flow_net: PyramidFlowNet
    fusion_net: nn.Module
    mode: str = SINGLE_REFERENCE
    upscaler: Optional[LearnedUpscaler] = None  # frozen SISR plug-in, if any
    optimizer: Optional[torch.optim.Adam] = None
    optimizer_step: Optional[str] = None
    iteration: int = 0
    loss_history: list[dict] = field(default_factory=list)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def log(self, loss: torch.Tensor, lr: float, t0: float) -> None:
        self.loss_history.append(
            {
                "iteration": self.iteration,
                "loss": float(loss.detach()),
                "lr": lr,
                "wallclock": time.time() - t0,
            }
        )


def create_train_state(
    seed: int = 0, mode: str = SINGLE_REFERENCE, head: str = "awfusion"
) -> TrainState:
    torch.manual_seed(seed)
    flow_net = PyramidFlowNet()
    fusion_net: nn.Module = FusionNet(mode) if head == "awfusion" else ConvDP()
    return TrainState(
        flow_net=flow_net,
        fusion_net=fusion_net,
        mode=mode,
        rng=np.random.default_rng(seed),
    )


def _stack(samples: list[dict[str, torch.Tensor]], key: str) -> torch.Tensor:
    return torch.stack([s[key] for s in samples], dim=0)


def _noisy_upscale(
    low_b: torch.Tensor,
    n: int,
    noise_variance: float,
    seed: int,
    upscaler: Optional[LearnedUpscaler] = None,
) -> torch.Tensor:
    if upscaler is None:
        lsr_up = resize_bicubic(low_b, Fraction(n))
    else:
        with torch.no_grad():  # the SISR plug-in stays frozen here
            lsr_up = upscaler(low_b)
    if noise_variance > 0:
        lsr_up = add_gaussian_noise(lsr_up, noise_variance, seed)
    return lsr_up


def synthesis_loss(
    state: TrainState,
    batch: list[dict[str, torch.Tensor]],
    cfg: TrainConfig,
    noise_seed: int,
) -> torch.Tensor:
    """End-to-end reconstruction loss for one batch."""
    ref = _stack(batch, "ref")
    gt = _stack(batch, "gt")
    low = _stack(batch, "low")
    h, w = gt.shape[1], gt.shape[2]
    lsr_up = _noisy_upscale(low, cfg.scale_n, cfg.noise_variance, noise_seed, state.upscaler)
    flow_q = state.flow_net(ref, lsr_up)
    flow = upsample_flow(flow_q, 4, out_size=(h, w))
    ref_w = warp_backward(ref, flow)
    residual = ref_w - lsr_up
    if isinstance(state.fusion_net, ConvDP):
        y = convdp_forward(state.fusion_net, ref_w, lsr_up, flow, residual)
    elif state.mode == SINGLE_REFERENCE:
        out = fusion_forward(state.fusion_net, ref_w, lsr_up, flow, residual)
        y = synthesize_single(ref_w, lsr_up, extract_filters(out), extract_mask(out))
    else:
        ref1 = _stack(batch, "ref1")
        flow1_q = state.flow_net(ref1, lsr_up)
        flow1 = upsample_flow(flow1_q, 4, out_size=(h, w))
        ref1_w = warp_backward(ref1, flow1)
        residual1 = ref1_w - lsr_up
        out = fusion_forward(
            state.fusion_net, ref_w, lsr_up, flow, residual,
            ref1_warped=ref1_w, flow1=flow1, residual1=residual1,
        )
        bank0, bank1 = extract_filters(out)
        m0, m1, m2 = extract_mask(out)
        y = synthesize_multi(
            apply_dynamic_filters(ref_w, bank0),
            apply_dynamic_filters(ref1_w, bank1),
            lsr_up,
            m0,
            m1,
            m2,
        )
    return rec_loss(y, gt)


def _guard_finite(state: TrainState, loss: torch.Tensor, cfg: TrainConfig) -> None:
    if torch.isfinite(loss):
        return
    path = cache_dir() / f"diagnostic_iter{state.iteration}.ckpt"
    save_train_state(path, state, cfg)
    raise TrainingDivergedError(
        f"non-finite loss at iteration {state.iteration}; diagnostic checkpoint: {path}"
    )


def _make_optimizer(state: TrainState, cfg: TrainConfig) -> torch.optim.Adam:
    if cfg.step == STEP_FLOW:
        groups = [{"params": list(state.flow_net.parameters()), "lr": cfg.resolved_lr}]
    elif cfg.step == STEP_FUSION:
        groups = [{"params": list(state.fusion_net.parameters()), "lr": cfg.resolved_lr}]
    else:
        groups = [
            {"params": list(state.fusion_net.parameters()), "lr": cfg.resolved_lr},
            {"params": list(state.flow_net.parameters()), "lr": cfg.flow_learning_rate},
        ]
    return torch.optim.Adam(groups, betas=cfg.betas)


def _ensure_optimizer(state: TrainState, cfg: TrainConfig) -> torch.optim.Adam:
    if state.optimizer is None or state.optimizer_step != cfg.step:
        state.optimizer = _make_optimizer(state, cfg)
        state.optimizer_step = cfg.step
    return state.optimizer


def _affine_flow(h: int, w: int, params: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    """Backward flow of a small affine motion (rotation, scale, shift)."""
    angle, scale, tx, ty = params
    cos, sin = math.cos(angle) * scale, math.sin(angle) * scale
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    x0, y0 = xs - cx, ys - cy
    src_x = cos * x0 - sin * y0 + cx + tx
    src_y = sin * x0 + cos * y0 + cy + ty
    flow = np.stack([src_x - xs, src_y - ys], axis=-1)
    return torch.from_numpy(flow).to(dtype)


def _quarter_sites(flow_full: torch.Tensor) -> torch.Tensor:
    """Ground-truth quarter-grid flow (quarter units) from a full field.

    Quarter site q maps to full-resolution position 4q + 1.5 under the
    half-pixel upsampling convention; averaging rows/cols 4q+1 and 4q+2
    evaluates that center exactly for affine fields.
    """
    h, w = flow_full.shape[0], flow_full.shape[1]
    qh, qw = math.ceil(h / 4), math.ceil(w / 4)
    ys0 = torch.clamp(torch.arange(qh) * 4 + 1, max=h - 1)
    ys1 = torch.clamp(torch.arange(qh) * 4 + 2, max=h - 1)
    xs0 = torch.clamp(torch.arange(qw) * 4 + 1, max=w - 1)
    xs1 = torch.clamp(torch.arange(qw) * 4 + 2, max=w - 1)
    rows = (flow_full[ys0] + flow_full[ys1]) / 2.0
    sampled = (rows[:, xs0] + rows[:, xs1]) / 2.0
    return sampled / 4.0


def pretrain_flow(state: TrainState, sampler, cfg: TrainConfig) -> TrainState:
    """Supervised flow initialization on synthetic random-warp pairs.

    Random affine motions (small rotation/scale plus shifts up to 8 px)
    applied to dataset crops give pairs with known flow; the loss is the
    mean endpoint error on the quarter grid.
    """
    opt = torch.optim.Adam(state.flow_net.parameters(), lr=PRETRAIN_LR, betas=cfg.betas)
    t0 = time.time()
    for _ in range(cfg.pretrain_iterations):
        batch = [sampler.sample(state.rng) for _ in range(cfg.batch_size)]
        ref = _stack(batch, "ref")
        params = np.stack(
            [
                state.rng.uniform(-0.05, 0.05, size=cfg.batch_size),
                state.rng.uniform(0.97, 1.03, size=cfg.batch_size),
                state.rng.uniform(-8.0, 8.0, size=cfg.batch_size),
                state.rng.uniform(-8.0, 8.0, size=cfg.batch_size),
            ],
            axis=1,
        )
        h, w = ref.shape[1], ref.shape[2]
        flows = torch.stack(
            [_affine_flow(h, w, params[i], ref.dtype) for i in range(cfg.batch_size)]
        )
        target = warp_backward(ref, flows)
        if cfg.noise_variance > 0:
            target = add_gaussian_noise(
                target, cfg.noise_variance, int(state.rng.integers(0, 2**31))
            )
        gt_q = torch.stack([_quarter_sites(flows[i]) for i in range(cfg.batch_size)])
        pred = state.flow_net(ref, target)
        loss = torch.sqrt(((pred - gt_q) ** 2).sum(dim=-1) + 1e-8).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        state.iteration += 1
        _guard_finite(state, loss.detach(), cfg)
        state.log(loss, PRETRAIN_LR, t0)
    return state


def train_step1_flow(state: TrainState, sampler, cfg: TrainConfig) -> TrainState:
    """Fine-tune the flow network with the L1 warping loss; fusion untouched."""
    cfg = replace(cfg, step=STEP_FLOW)
    opt = _ensure_optimizer(state, cfg)
    for p in state.fusion_net.parameters():
        p.requires_grad_(False)
    for p in state.flow_net.parameters():
        p.requires_grad_(True)
    t0 = time.time()
    for _ in range(cfg.resolved_iterations):
        batch = [sampler.sample(state.rng) for _ in range(cfg.batch_size)]
        noise_seed = int(state.rng.integers(0, 2**31))
        ref = _stack(batch, "ref")
        gt = _stack(batch, "gt")
        low = _stack(batch, "low")
        lsr_up = _noisy_upscale(low, cfg.scale_n, cfg.noise_variance, noise_seed, state.upscaler)
        flow_q = state.flow_net(ref, lsr_up)
        loss = warp_loss(ref, flow_q, gt)
        opt.zero_grad()
        loss.backward()
        opt.step()
        state.iteration += 1
        _guard_finite(state, loss.detach(), cfg)
        state.log(loss, cfg.resolved_lr, t0)
    for p in state.fusion_net.parameters():
        p.requires_grad_(True)
    return state


def train_step2_fusion(state: TrainState, sampler, cfg: TrainConfig) -> TrainState:
    """Train the fusion head with the flow network frozen (gradient blocked)."""
    cfg = replace(cfg, step=STEP_FUSION)
    opt = _ensure_optimizer(state, cfg)
    for p in state.flow_net.parameters():
        p.requires_grad_(False)
    t0 = time.time()
    for _ in range(cfg.resolved_iterations):
        batch = [sampler.sample(state.rng) for _ in range(cfg.batch_size)]
        noise_seed = int(state.rng.integers(0, 2**31))
        loss = synthesis_loss(state, batch, cfg, noise_seed)
        opt.zero_grad()
        loss.backward()
        opt.step()
        state.iteration += 1
        _guard_finite(state, loss.detach(), cfg)
        state.log(loss, cfg.resolved_lr, t0)
    for p in state.flow_net.parameters():
        p.requires_grad_(True)
    return state


def train_step3_joint(state: TrainState, sampler, cfg: TrainConfig) -> TrainState:
    """End-to-end training of both networks with per-group learning rates."""
    cfg = replace(cfg, step=STEP_JOINT)
    opt = _ensure_optimizer(state, cfg)
    for p in state.flow_net.parameters():
        p.requires_grad_(True)
    for p in state.fusion_net.parameters():
        p.requires_grad_(True)
    t0 = time.time()
    for _ in range(cfg.resolved_iterations):
        batch = [sampler.sample(state.rng) for _ in range(cfg.batch_size)]
        noise_seed = int(state.rng.integers(0, 2**31))
        loss = synthesis_loss(state, batch, cfg, noise_seed)
        opt.zero_grad()
        loss.backward()
        opt.step()
        state.iteration += 1
        _guard_finite(state, loss.detach(), cfg)
        state.log(loss, cfg.resolved_lr, t0)
    return state


def pretrain_upscaler(
    upscaler: LearnedUpscaler,
    sampler,
    iterations: int,
    rng: np.random.Generator,
    batch_size: int = 4,
    lr: float = 1e-4,
) -> LearnedUpscaler:
    """L1-train the SISR plug-in to refine bicubic upscaling."""
    opt = torch.optim.Adam(upscaler.parameters(), lr=lr, betas=ADAM_BETAS)
    for _ in range(iterations):
        batch = [sampler.sample(rng) for _ in range(batch_size)]
        low = _stack(batch, "low")
        gt = _stack(batch, "gt")
        pred = upscaler(low)
        loss = rec_loss(pred, gt)
        opt.zero_grad()
        loss.backward()
        opt.step()
    return upscaler


def write_loss_csv(path, history: list[dict]) -> None:
    lines = ["iteration,loss,lr,wallclock"]
    for row in history:
        lines.append(
            f"{row['iteration']},{row['loss']:.8f},{row['lr']:.3e},{row['wallclock']:.3f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def save_train_state(path, state: TrainState, cfg: Optional[TrainConfig] = None) -> None:
    """Serialize networks, optimizer moments, RNG and history, bit-exactly."""
    tensors: dict[str, torch.Tensor] = {}
    modules = [("flow", state.flow_net), ("fusion", state.fusion_net)]
    if state.upscaler is not None:
        modules.append(("upscaler", state.upscaler))
    for prefix, module in modules:
        for k, v in module.state_dict().items():
            tensors[f"{prefix}.{k}"] = v
    opt_groups = None
    if state.optimizer is not None:
        sd = state.optimizer.state_dict()
        for pid, pstate in sd["state"].items():
            for key, val in pstate.items():
                tensors[f"optim.{pid}.{key}"] = (
                    val if isinstance(val, torch.Tensor) else torch.tensor(float(val))
                )
        opt_groups = [
            {k: v for k, v in g.items()} for g in sd["param_groups"]
        ]
    meta = {
        "kind": "train_state",
        "mode": state.mode,
        "head": "convdp" if isinstance(state.fusion_net, ConvDP) else "awfusion",
        "has_upscaler": state.upscaler is not None,
        "upscaler_scale": None if state.upscaler is None else int(state.upscaler.scale),
        "iteration": state.iteration,
        "loss_history": state.loss_history,
        "rng_state": _rng_state_to_json(state.rng),
        "optimizer_step": state.optimizer_step,
        "optimizer_groups": opt_groups,
        "config": cfg.to_dict() if cfg is not None else None,
    }
    save_tensors(path, tensors, meta)


def load_train_state(path) -> TrainState:
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "train_state":
        raise ConfigError(f"{path} is not a training checkpoint")
    mode = meta["mode"]
    flow_net = PyramidFlowNet()
    fusion_net: nn.Module = FusionNet(mode) if meta["head"] == "awfusion" else ConvDP()
    flow_sd = {k[5:]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith("flow.")}
    fusion_sd = {k[7:]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith("fusion.")}
    flow_net.load_state_dict(flow_sd)
    fusion_net.load_state_dict(fusion_sd)
    upscaler = None
    if meta.get("has_upscaler"):
        upscaler = LearnedUpscaler(scale=int(meta.get("upscaler_scale") or 4))
        up_sd = {
            k[9:]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith("upscaler.")
        }
        upscaler.load_state_dict(up_sd)
    state = TrainState(
        flow_net=flow_net,
        fusion_net=fusion_net,
        mode=mode,
        upscaler=upscaler,
        iteration=int(meta["iteration"]),
        loss_history=list(meta["loss_history"]),
        rng=_rng_state_from_json(meta["rng_state"]),
    )
    if meta.get("optimizer_step"):
        cfg_d = meta.get("config") or {}
        cfg = TrainConfig(
            step=meta["optimizer_step"],
            learning_rate=cfg_d.get("learning_rate"),
            flow_learning_rate=cfg_d.get("flow_learning_rate", JOINT_FLOW_LR),
            betas=tuple(cfg_d.get("betas", ADAM_BETAS)),
        )
        opt = _make_optimizer(state, cfg)
        opt_state: dict[int, dict] = {}
        for name, arr in tensors.items():
            if not name.startswith("optim."):
                continue
            _, pid, key = name.split(".", 2)
            entry = opt_state.setdefault(int(pid), {})
            t = torch.from_numpy(arr)
            entry[key] = t
        opt.load_state_dict({"state": opt_state, "param_groups": meta["optimizer_groups"]})
        state.optimizer = opt
        state.optimizer_step = meta["optimizer_step"]
    return state


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return {
        "bit_generator": st["bit_generator"],
        "state": int(st["state"]["state"]),
        "inc": int(st["state"]["inc"]),
        "has_uint32": int(st["has_uint32"]),
        "uinteger": int(st["uinteger"]),
    }


def _rng_state_from_json(d: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": d["bit_generator"],
        "state": {"state": int(d["state"]), "inc": int(d["inc"])},
        "has_uint32": int(d["has_uint32"]),
        "uinteger": int(d["uinteger"]),
    }
    return rng
