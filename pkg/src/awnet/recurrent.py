"""Group-of-pictures scheduling and frame-recurrent synthesis.

Each group of ``m`` low-resolution frames is aligned to one
high-resolution camera frame at its synchronization index
``ceil(m/2) - 1``.  The synchronization frame is super-resolved first
against that camera frame; the remaining targets are reconstructed
outward (+1, -1, +2, -2, ...), each using its immediately adjacent
previous reconstruction as the reference.  The forward and backward
chains are independent, so their interleaving does not affect the result.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Optional, Union

import torch
import torch.nn as nn

from .datamodel import (
    Frame,
    VideoSequence,
    apply_dynamic_filters,
    resize_bicubic,
    upsample_flow,
    warp_backward,
)
from .errors import ConfigError, DomainError, InvariantError, ShapeError
from .flow import FlowEstimator
from .fusion import (
    MULTI_REFERENCE,
    SINGLE_REFERENCE,
    ConvDP,
    convdp_forward,
    extract_filters,
    extract_mask,
    fusion_forward,
    synthesize_multi,
    synthesize_single,
    weight_map,
)
from .simulator import sync_index


class ReferenceKind(Enum):
    HSR_FRAME = "hsr_frame"
    PRIOR_RECON = "prior_recon"


@dataclass(frozen=True)
class GoPStep:
    """One synthesis step: which target to build from which reference."""

    target_index: int
    reference_kind: ReferenceKind
    reference_index: int
    # second reference for multi-reference mode: the bracketing camera
    # frame on the far side of the target ("prev_hsr" or "next_hsr")
    second_reference: Optional[str] = None


@dataclass
class GoPSchedule:
    m: int
    sync_index: int
    steps: list[GoPStep]
    mode: str = SINGLE_REFERENCE

    def validate(self) -> None:
        if len(self.steps) != self.m:
            raise InvariantError(f"schedule must have exactly m={self.m} steps")
        first = self.steps[0]
        if first.target_index != self.sync_index or first.reference_kind != ReferenceKind.HSR_FRAME:
            raise InvariantError("first step must target the sync index from the camera frame")
        done: set[int] = set()
        hsr_steps = 0
        for step in self.steps:
            if step.target_index in done:
                raise InvariantError(f"target {step.target_index} scheduled twice")
            if not 0 <= step.target_index < self.m:
                raise InvariantError(f"target {step.target_index} out of range")
            if step.reference_kind == ReferenceKind.HSR_FRAME:
                hsr_steps += 1
            else:
                if step.reference_index not in done:
                    raise InvariantError(
                        f"step {step.target_index} references unfinished frame "
                        f"{step.reference_index}"
                    )
                if abs(step.reference_index - step.target_index) != 1:
                    raise InvariantError("recurrent reference must be adjacent to its target")
            done.add(step.target_index)
        if hsr_steps != 1:
            raise InvariantError(f"expected exactly one camera-frame step, got {hsr_steps}")


def build_schedule(m: int, mode: str = SINGLE_REFERENCE) -> GoPSchedule:
    """Outward-interleaved synthesis plan for a group of m frames."""
    if m < 1:
        raise DomainError(f"group size must be >= 1, got {m}")
    if mode not in (SINGLE_REFERENCE, MULTI_REFERENCE):
        raise ConfigError(f"unknown mode {mode!r}")
    c = sync_index(m)
    steps = [GoPStep(c, ReferenceKind.HSR_FRAME, c)]
    for ring in range(1, m):
        for idx in (c + ring, c - ring):
            if 0 <= idx < m and len(steps) < m:
                second = None
                if mode == MULTI_REFERENCE:
                    second = "next_hsr" if idx > c else "prev_hsr"
                ref = idx - 1 if idx > c else idx + 1
                steps.append(GoPStep(idx, ReferenceKind.PRIOR_RECON, ref, second))
    schedule = GoPSchedule(m, c, steps, mode)
    schedule.validate()
    return schedule


def sequential_chain_schedule(schedule: GoPSchedule) -> GoPSchedule:
    """Reorder a schedule to run the forward chain fully, then the backward.

    Chains are independent, so this must produce bit-identical frames; it
    exists so tests can assert that property.
    """
    sync = [s for s in schedule.steps if s.reference_kind == ReferenceKind.HSR_FRAME]
    fwd = sorted(
        (s for s in schedule.steps[1:] if s.target_index > schedule.sync_index),
        key=lambda s: s.target_index,
    )
    bwd = sorted(
        (s for s in schedule.steps[1:] if s.target_index < schedule.sync_index),
        key=lambda s: -s.target_index,
    )
    out = GoPSchedule(schedule.m, schedule.sync_index, sync + fwd + bwd, schedule.mode)
    out.validate()
    return out


class LearnedUpscaler(nn.Module):
    """Small residual refinement on top of bicubic upscaling (SISR plug-in).

    The final layer is zero-initialized, so an untrained instance equals
    plain bicubic upscaling.
    """

    def __init__(self, scale: int = 4, width: int = 16):
        super().__init__()
        self.scale = scale
        self.conv1 = nn.Conv2d(3, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)
        self.conv3 = nn.Conv2d(width, 3, 3, padding=1)
        nn.init.zeros_(self.conv3.weight)
        nn.init.zeros_(self.conv3.bias)
        self.act = nn.LeakyReLU(0.1)

    def forward(self, low: torch.Tensor) -> torch.Tensor:
        """(B, h, w, 3) -> (B, h*scale, w*scale, 3), clamped."""
        base = resize_bicubic(low, Fraction(self.scale))
        x = base.permute(0, 3, 1, 2)
        x = self.act(self.conv1(x))
        x = self.act(self.conv2(x))
        x = self.conv3(x)
        return (base + x.permute(0, 2, 3, 1)).clamp(0.0, 1.0)


Upscaler = Union[str, nn.Module]


@dataclass
class SynthesisContext:
    """Networks and options used for one synthesis run."""

    flow_estimator: FlowEstimator
    fusion_net: nn.Module  # FusionNet or ConvDP
    upscaler: Upscaler = "bicubic"
    mode: str = SINGLE_REFERENCE

    def __post_init__(self):
        if self.mode not in (SINGLE_REFERENCE, MULTI_REFERENCE):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if isinstance(self.upscaler, str) and self.upscaler != "bicubic":
            raise ConfigError(f"unknown upscaler {self.upscaler!r}")
        if isinstance(self.fusion_net, ConvDP) and self.mode != SINGLE_REFERENCE:
            raise ConfigError("direct-prediction head only supports single-reference mode")


def upscale(low: torch.Tensor, n: int, upscaler: Upscaler) -> torch.Tensor:
    """Upscale (h, w, 3) by n with the configured operator."""
    if isinstance(upscaler, str):
        return resize_bicubic(low, Fraction(n))
    with torch.no_grad():
        out = upscaler(low.unsqueeze(0)).squeeze(0)
    if out.shape[0] != low.shape[0] * n or out.shape[1] != low.shape[1] * n:
        raise ShapeError(
            f"upscaler produced {tuple(out.shape)}, expected x{n} of {tuple(low.shape)}"
        )
    return out


@dataclass
class SynthesisResult:
    video: VideoSequence
    weight_maps: Optional[list[torch.Tensor]] = None


def reconstruct_frame(
    ctx: SynthesisContext,
    reference: torch.Tensor,
    lsr_up: torch.Tensor,
    second_reference: Optional[torch.Tensor] = None,
) -> tuple[torch.Tensor, Optional[torch.Tensor]]:
    """Flow -> warp -> fuse -> synthesize one frame.

    Returns the reconstruction and the per-pixel reference-contribution
    map (None for the direct-prediction head).  In multi-reference mode
    the emitted map is the total non-upscale contribution ``1 - M_lsr``.
    """
    h, w = lsr_up.shape[0], lsr_up.shape[1]
    with torch.no_grad():
        flow_q = ctx.flow_estimator.estimate(reference, lsr_up)
        flow = upsample_flow(flow_q, 4, out_size=(h, w))
        ref_w = warp_backward(reference, flow)
        residual = ref_w - lsr_up
        if isinstance(ctx.fusion_net, ConvDP):
            return convdp_forward(ctx.fusion_net, ref_w, lsr_up, flow, residual), None
        if ctx.mode == SINGLE_REFERENCE:
            out = fusion_forward(ctx.fusion_net, ref_w, lsr_up, flow, residual)
            bank = extract_filters(out)
            mask = extract_mask(out)
            y = synthesize_single(ref_w, lsr_up, bank, mask)
            return y, weight_map(mask, bank)
        if second_reference is None:
            raise InvariantError("multi-reference synthesis needs a second reference")
        flow1_q = ctx.flow_estimator.estimate(second_reference, lsr_up)
        flow1 = upsample_flow(flow1_q, 4, out_size=(h, w))
        ref1_w = warp_backward(second_reference, flow1)
        residual1 = ref1_w - lsr_up
        out = fusion_forward(
            ctx.fusion_net, ref_w, lsr_up, flow, residual,
            ref1_warped=ref1_w, flow1=flow1, residual1=residual1,
        )
        bank0, bank1 = extract_filters(out)
        m0, m1, m2 = extract_mask(out)
        ref0_wk = apply_dynamic_filters(ref_w, bank0)
        ref1_wk = apply_dynamic_filters(ref1_w, bank1)
        y = synthesize_multi(ref0_wk, ref1_wk, lsr_up, m0, m1, m2)
        return y, (1.0 - m2).clamp(0.0, 1.0)


def _run_schedule(
    hsr_frame: Frame,
    lsr_group: list[Frame],
    ctx: SynthesisContext,
    schedule: GoPSchedule,
    prev_hsr: Optional[Frame],
    next_hsr: Optional[Frame],
) -> tuple[dict[int, torch.Tensor], dict[int, Optional[torch.Tensor]]]:
    if len(lsr_group) != schedule.m:
        raise ShapeError(f"expected {schedule.m} frames in the group, got {len(lsr_group)}")
    hh, hw = hsr_frame.resolution
    lh, lw = lsr_group[0].resolution
    if hh % lh != 0 or hw % lw != 0 or hh // lh != hw // lw:
        raise ShapeError(
            f"camera frame {hh}x{hw} is not an integer upscale of group frames {lh}x{lw}"
        )
    n = hh // lh
    schedule.validate()
    # fall back to the group's own camera frame at sequence boundaries
    brackets = {
        "prev_hsr": prev_hsr if prev_hsr is not None else hsr_frame,
        "next_hsr": next_hsr if next_hsr is not None else hsr_frame,
    }
    recon: dict[int, torch.Tensor] = {}
    wmaps: dict[int, Optional[torch.Tensor]] = {}
    for step in schedule.steps:
        lsr_up = upscale(lsr_group[step.target_index].pixels, n, ctx.upscaler)
        if step.reference_kind == ReferenceKind.HSR_FRAME:
            reference = hsr_frame.pixels
        else:
            if step.reference_index not in recon:
                raise InvariantError(
                    f"schedule references unfinished frame {step.reference_index}"
                )
            reference = recon[step.reference_index]
        second = None
        if ctx.mode == MULTI_REFERENCE:
            bracket = brackets[step.second_reference] if step.second_reference else hsr_frame
            second = bracket.pixels
        y, wmap = reconstruct_frame(ctx, reference, lsr_up, second)
        recon[step.target_index] = y
        wmaps[step.target_index] = wmap
    return recon, wmaps


def synthesize_gop(
    hsr_frame: Frame,
    lsr_group: list[Frame],
    ctx: SynthesisContext,
    schedule: GoPSchedule,
    prev_hsr: Optional[Frame] = None,
    next_hsr: Optional[Frame] = None,
) -> list[Frame]:
    """Run one group's schedule; outputs are ordered by target index."""
    recon, _ = _run_schedule(hsr_frame, lsr_group, ctx, schedule, prev_hsr, next_hsr)
    return [Frame(recon[i], timestamp=lsr_group[i].timestamp) for i in range(schedule.m)]


def synthesize_sequence(
    hsr_seq: VideoSequence,
    lsr_seq: VideoSequence,
    ctx: SynthesisContext,
    collect_weight_maps: bool = False,
) -> SynthesisResult:
    """Synthesize the full high spatiotemporal resolution sequence.

    The low-rate sequence is partitioned into groups of m = fps ratio,
    group i paired with camera frame i; output keeps the low-rate
    sequence's frame rate at the camera frame's resolution.  Trailing
    frames with no camera frame of their own continue the forward
    recurrence from the last reconstruction.
    """
    ratio = lsr_seq.fps / hsr_seq.fps
    m = round(ratio)
    if abs(ratio - m) > 1e-6 or m < 1:
        raise ConfigError(f"non-integer frame-rate ratio m = {ratio}")
    if len(lsr_seq) < m or len(hsr_seq) < 1:
        raise ConfigError("sequences too short for one group")
    hh, hw = hsr_seq.resolution
    lh, lw = lsr_seq.resolution
    if hh % lh != 0 or hw % lw != 0:
        raise ShapeError("camera resolution must be an integer multiple of the low-res input")
    n = hh // lh

    schedule = build_schedule(m, ctx.mode)
    groups = min(len(lsr_seq) // m, len(hsr_seq))
    outputs: list[Optional[Frame]] = [None] * len(lsr_seq)
    weights: list[Optional[torch.Tensor]] = [None] * len(lsr_seq)

    for g in range(groups):
        lsr_group = [lsr_seq[g * m + i] for i in range(m)]
        recon, wmaps = _run_schedule(
            hsr_seq[g],
            lsr_group,
            ctx,
            schedule,
            prev_hsr=hsr_seq[g - 1] if g > 0 else None,
            next_hsr=hsr_seq[g + 1] if g + 1 < len(hsr_seq) else None,
        )
        for i in range(m):
            idx = g * m + i
            outputs[idx] = Frame(recon[i], timestamp=lsr_seq[idx].timestamp)
            weights[idx] = wmaps[i]

    # trailing frames: continue the forward recurrence from the last output
    last_done = groups * m - 1
    for idx in range(groups * m, len(lsr_seq)):
        reference = outputs[last_done].pixels
        lsr_up = upscale(lsr_seq[idx].pixels, n, ctx.upscaler)
        second = hsr_seq[len(hsr_seq) - 1].pixels if ctx.mode == MULTI_REFERENCE else None
        y, wmap = reconstruct_frame(ctx, reference, lsr_up, second)
        outputs[idx] = Frame(y, timestamp=lsr_seq[idx].timestamp)
        weights[idx] = wmap
        last_done = idx

    video = VideoSequence([f for f in outputs if f is not None], fps=lsr_seq.fps)
    return SynthesisResult(video, weights if collect_weight_maps else None)
