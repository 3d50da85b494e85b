"""Dense optical flow between a reference frame and an upscaled target frame.

Two estimators live here: a compact trainable coarse-to-fine pyramid
network, and an exhaustive block-matching oracle used for testing.

Unit conventions (important):

* ``PyramidFlowNet`` emits flow on the quarter grid in *quarter-resolution*
  pixel units; ``datamodel.upsample_flow`` converts it to full-resolution
  units (bilinear upsample, values x4) before warping.
* ``block_match_oracle`` searches integer *full-resolution* displacements
  and stores them unscaled on the quarter grid, so a recovered 8-pixel
  shift reads as (8, 0).  Spatially upsample it without value scaling if
  it must drive a warp.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .datamodel import _batched, _upsample_by2, upsample_flow, warp_backward
from .errors import ShapeError


class FlowEstimator(ABC):
    """Maps (reference, target) full-resolution frames to quarter-res flow.

    The flow convention is backward: it maps target coordinates to
    reference coordinates, so warping the reference by the (upsampled)
    flow approximates the target.
    """

    @abstractmethod
    def estimate(self, ref: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        """(H, W, 3), (H, W, 3) -> (ceil(H/4), ceil(W/4), 2)."""


def _check_pair(ref: torch.Tensor, target: torch.Tensor) -> None:
    if ref.shape != target.shape:
        raise ShapeError(f"ref {tuple(ref.shape)} vs target {tuple(target.shape)}")
    if ref.ndim not in (3, 4) or ref.shape[-1] != 3:
        raise ShapeError(f"expected (..., H, W, 3), got {tuple(ref.shape)}")


def estimate_flow(est: FlowEstimator, ref: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Validated dispatch onto a flow estimator."""
    _check_pair(ref, target)
    h, w = ref.shape[-3], ref.shape[-2]
    out = est.estimate(ref, target)
    expect = (math.ceil(h / 4), math.ceil(w / 4), 2)
    if tuple(out.shape[-3:]) != expect:
        raise ShapeError(f"estimator returned {tuple(out.shape)}, expected {expect}")
    return out


def conv(cin: int, cout: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1)


def local_correlation(a: torch.Tensor, b: torch.Tensor, radius: int = 3) -> torch.Tensor:
    """Cosine similarity of feature vectors over a local displacement window.

    (B, H, W, C) x2 -> (B, H, W, (2*radius+1)^2).  Features are mean-
    centered and L2-normalized per position first; without that, the DC
    response drowns the matching peak and displacements are unlearnable.
    Parameter-free and differentiable.
    """
    bsz, h, w, _ = a.shape
    a = a - a.mean(-1, keepdim=True)
    a = a / (a.norm(dim=-1, keepdim=True) + 1e-6)
    b = b - b.mean(-1, keepdim=True)
    b = b / (b.norm(dim=-1, keepdim=True) + 1e-6)
    bp = F.pad(b.permute(0, 3, 1, 2), (radius,) * 4, mode="replicate").permute(0, 2, 3, 1)
    outs = []
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            outs.append((a * bp[:, dy : dy + h, dx : dx + w]).sum(-1))
    return torch.stack(outs, dim=-1)


class PyramidFlowNet(nn.Module, FlowEstimator):
    """Compact 3-level coarse-to-fine flow network.

    A shared feature pyramid (16/32/64 channels at 1/2, 1/4 and 1/8
    resolution, each level two 3x3 convs with stride 2 then 1 and
    leaky-ReLU 0.1) feeds per-level refiners of five stacked 3x3 convs
    (64, 64, 32, 16, 2 channels).  Each refiner sees the target features,
    the reference features warped by the current flow estimate, the
    normalized local correlation between the two (radius 3), and the
    upsampled coarser flow.  Refinement runs at 1/8 then 1/4 resolution,
    so the output lives on the quarter grid.
    """

    LEVEL_CHANNELS = (16, 32, 64)
    CORR_RADIUS = 3

    def __init__(self):
        super().__init__()
        chans = self.LEVEL_CHANNELS
        corr_channels = (2 * self.CORR_RADIUS + 1) ** 2
        self.feat = nn.ModuleList()
        cin = 3
        for c in chans:
            self.feat.append(nn.ModuleList([conv(cin, c, stride=2), conv(c, c)]))
            cin = c
        self.refiners = nn.ModuleDict()
        for level in (2, 1):  # 1/8 then 1/4 resolution
            c = chans[level]
            cin = 2 * c + corr_channels + 2
            layers = []
            for cout in (64, 64, 32, 16, 2):
                layers.append(conv(cin, cout))
                cin = cout
            self.refiners[str(level)] = nn.ModuleList(layers)
        self.act = nn.LeakyReLU(0.1)

    def features(self, image: torch.Tensor) -> list[torch.Tensor]:
        """(B, H, W, 3) -> per-level (B, H/2^l, W/2^l, C_l) feature maps."""
        x = image.permute(0, 3, 1, 2)
        out = []
        for block in self.feat:
            x = self.act(block[0](x))
            x = self.act(block[1](x))
            out.append(x.permute(0, 2, 3, 1))
        return out

    def _refine(self, level: int, target_f: torch.Tensor, ref_f: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
        ref_w = warp_backward(ref_f, flow)
        corr = local_correlation(target_f, ref_w, self.CORR_RADIUS)
        x = torch.cat([target_f, ref_w, corr, flow], dim=-1).permute(0, 3, 1, 2)
        layers = self.refiners[str(level)]
        for i, layer in enumerate(layers):
            x = layer(x)
            if i < len(layers) - 1:
                x = self.act(x)
        return flow + x.permute(0, 2, 3, 1)

    def forward(self, ref: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        """Batched flow: (B, H, W, 3) x2 -> (B, ceil(H/4), ceil(W/4), 2)."""
        _check_pair(ref, target)
        ref, squeeze = _batched(ref, 3)
        target, _ = _batched(target, 3)
        ref_feats = self.features(ref)
        target_feats = self.features(target)
        b = ref.shape[0]
        h8, w8 = ref_feats[2].shape[1], ref_feats[2].shape[2]
        flow = torch.zeros((b, h8, w8, 2), dtype=ref.dtype, device=ref.device)
        flow = self._refine(2, target_feats[2], ref_feats[2], flow)
        h4, w4 = ref_feats[1].shape[1], ref_feats[1].shape[2]
        flow = _upsample_by2(flow, h4, w4, 2.0)
        flow = self._refine(1, target_feats[1], ref_feats[1], flow)
        return flow.squeeze(0) if squeeze else flow

    def estimate(self, ref: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.forward(ref, target)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


class BlockMatchingEstimator(FlowEstimator):
    """FlowEstimator facade over ``block_match_oracle`` (test oracle)."""

    def __init__(self, block: int = 8, radius: int = 12):
        self.block = block
        self.radius = radius

    def estimate(self, ref: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        return block_match_oracle(ref, target, self.block, self.radius)


def block_match_oracle(
    ref: torch.Tensor, target: torch.Tensor, block: int = 8, radius: int = 12
) -> torch.Tensor:
    """Exhaustive SAD block matching on the quarter grid.

    For every quarter-resolution site, searches integer full-resolution
    displacements in [-radius, radius]^2 for the block around the site
    that best matches the reference; ties break toward the smallest
    |displacement| then lexicographic (dx, dy).  Returned values are
    full-resolution pixel displacements.
    """
    _check_pair(ref, target)
    ref_np = ref.detach().to(torch.float64).numpy().sum(axis=2)
    tgt_np = target.detach().to(torch.float64).numpy().sum(axis=2)
    h, w = ref_np.shape
    qh, qw = math.ceil(h / 4), math.ceil(w / 4)

    # The block for site (qy, qx) covers full-res rows [4qy - 2, 4qy - 2 + block),
    # centered on the 4x4 cell the site summarizes.  Both images are
    # edge-padded far enough that every shifted window is in bounds.
    margin = radius + block
    pad_t = np.pad(tgt_np, margin, mode="edge")
    pad_r = np.pad(ref_np, margin, mode="edge")
    top = margin - 2  # padded row of full-res row -2
    dh, dw = h + block, w + block

    candidates = [
        (dx, dy) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)
    ]
    candidates.sort(key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]))

    qys = (np.arange(qh) * 4)[:, None]
    qxs = (np.arange(qw) * 4)[None, :]
    best = np.full((qh, qw), np.inf)
    best_dx = np.zeros((qh, qw), dtype=np.float64)
    best_dy = np.zeros((qh, qw), dtype=np.float64)

    t_crop = pad_t[top : top + dh, top : top + dw]
    for dx, dy in candidates:
        r_shift = pad_r[top + dy : top + dy + dh, top + dx : top + dx + dw]
        diff = np.abs(t_crop - r_shift)
        c = np.pad(np.cumsum(np.cumsum(diff, axis=0), axis=1), ((1, 0), (1, 0)))
        sad = (
            c[qys + block, qxs + block]
            - c[qys, qxs + block]
            - c[qys + block, qxs]
            + c[qys, qxs]
        )
        better = sad < best - 1e-12
        best = np.where(better, sad, best)
        best_dx = np.where(better, float(dx), best_dx)
        best_dy = np.where(better, float(dy), best_dy)

    out = np.stack([best_dx, best_dy], axis=-1)
    return torch.from_numpy(out).to(ref.dtype)


def warp_loss(ref: torch.Tensor, flow_q: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """L1 warping loss: mean |gt - warp(ref, upsampled flow)|."""
    if ref.shape != gt.shape:
        raise ShapeError(f"ref {tuple(ref.shape)} vs gt {tuple(gt.shape)}")
    h, w = ref.shape[-3], ref.shape[-2]
    full = upsample_flow(flow_q, 4, out_size=(h, w))
    warped = warp_backward(ref, full)
    return (gt - warped).abs().mean()


def endpoint_error(flow_a: torch.Tensor, flow_b: torch.Tensor) -> torch.Tensor:
    """Mean Euclidean distance between two flow fields (same units)."""
    if flow_a.shape != flow_b.shape:
        raise ShapeError("flow shapes differ")
    return torch.linalg.norm(flow_a - flow_b, dim=-1).mean()
