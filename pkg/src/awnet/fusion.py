"""Fusion network, dynamic-filter/mask extraction, and synthesis equations.

The network is a compact encoder/decoder without skip connections: three
stride-2 downscaling stages (32/64/128 channels), a two-conv bottleneck,
three bilinear-x2 upsampling stages (128/64/32), and a linear 1x1 head.
The head emits 26 channels in single-reference mode (25 filter taps plus
one mask logit) or 53 in two-reference mode (two filter banks plus three
softmax mask logits).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .datamodel import _batched, apply_dynamic_filters, blend_masked
from .errors import InvariantError, ModeError, ShapeError

SINGLE_REFERENCE = "single_reference"
MULTI_REFERENCE = "multi_reference"

CHANNELS = {SINGLE_REFERENCE: 26, MULTI_REFERENCE: 53}
INPUT_CHANNELS = {SINGLE_REFERENCE: 11, MULTI_REFERENCE: 19}
CENTER_TAP = 12  # channel of the 5x5 kernel's center weight


@dataclass
class FusionOutput:
    """Raw head output: (..., H, W, C) with C = 26 or 53, plus its mode."""

    channels: torch.Tensor
    mode: str

    def __post_init__(self):
        if self.mode not in CHANNELS:
            raise ModeError(f"unknown mode {self.mode!r}")
        if self.channels.shape[-1] != CHANNELS[self.mode]:
            raise ModeError(
                f"{self.mode} output must have {CHANNELS[self.mode]} channels, "
                f"got {self.channels.shape[-1]}"
            )


class FusionNet(nn.Module):
    """Encoder/decoder predicting per-pixel dynamic filters and masks."""

    def __init__(self, mode: str = SINGLE_REFERENCE):
        super().__init__()
        if mode not in CHANNELS:
            raise ModeError(f"unknown mode {mode!r}")
        self.mode = mode
        cin = INPUT_CHANNELS[mode]
        cout = CHANNELS[mode]
        widths = (32, 64, 128)
        enc = []
        for wd in widths:
            enc.append(nn.Conv2d(cin, wd, 3, stride=2, padding=1))
            enc.append(nn.Conv2d(wd, wd, 3, padding=1))
            cin = wd
        self.encoder = nn.ModuleList(enc)
        self.bottleneck = nn.ModuleList(
            [nn.Conv2d(128, 128, 3, padding=1), nn.Conv2d(128, 128, 3, padding=1)]
        )
        dec = []
        cin = 128
        for wd in (128, 64, 32):
            dec.append(nn.Conv2d(cin, wd, 3, padding=1))
            dec.append(nn.Conv2d(wd, wd, 3, padding=1))
            cin = wd
        self.decoder = nn.ModuleList(dec)
        self.head = nn.Conv2d(32, cout, 1)
        self.act = nn.LeakyReLU(0.1)
        self._init_head()

    def _init_head(self):
        """Start near the identity regime: delta filters, undecided masks."""
        nn.init.normal_(self.head.weight, std=1e-4)
        nn.init.zeros_(self.head.bias)
        with torch.no_grad():
            self.head.bias[CENTER_TAP] = 1.0
            if self.mode == MULTI_REFERENCE:
                self.head.bias[25 + CENTER_TAP] = 1.0

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, H, W, C_in) -> (B, H, W, C_out); any H, W (padded internally)."""
        if x.shape[-1] != INPUT_CHANNELS[self.mode]:
            raise ModeError(
                f"{self.mode} expects {INPUT_CHANNELS[self.mode]} input channels, "
                f"got {x.shape[-1]}"
            )
        x = x.permute(0, 3, 1, 2)
        h, w = x.shape[2], x.shape[3]
        pad_h = (-h) % 8
        pad_w = (-w) % 8
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h), mode="replicate")
        for i in range(0, len(self.encoder), 2):
            x = self.act(self.encoder[i](x))
            x = self.act(self.encoder[i + 1](x))
        for layer in self.bottleneck:
            x = self.act(layer(x))
        for i in range(0, len(self.decoder), 2):
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = self.act(self.decoder[i](x))
            x = self.act(self.decoder[i + 1](x))
        x = self.head(x)
        if pad_h or pad_w:
            x = x[:, :, :h, :w]
        return x.permute(0, 2, 3, 1)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


class ConvDP(nn.Module):
    """Direct-prediction ablation head: 36 stacked 3x3 convs, width 32.

    Predicts the output frame directly from the same inputs as the fusion
    network, with ReLU activations and a linear final layer.
    """

    def __init__(self, width: int = 32, depth: int = 36):
        super().__init__()
        self.mode = SINGLE_REFERENCE
        cin = INPUT_CHANNELS[SINGLE_REFERENCE]
        layers = []
        for i in range(depth):
            cout = 3 if i == depth - 1 else width
            layers.append(nn.Conv2d(cin, cout, 3, padding=1))
            cin = cout
        self.layers = nn.ModuleList(layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x.permute(0, 3, 1, 2)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.relu(x)
        return x.permute(0, 2, 3, 1)


def _stack_inputs(
    ref_warped: torch.Tensor,
    lsr_up: torch.Tensor,
    flow: torch.Tensor,
    residual: torch.Tensor,
    ref1_warped: Optional[torch.Tensor] = None,
    flow1: Optional[torch.Tensor] = None,
    residual1: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    multi = ref1_warped is not None
    parts = [ref_warped, lsr_up, flow, residual]
    if multi:
        if flow1 is None or residual1 is None:
            raise ModeError("two-reference inputs need ref1_warped, flow1 and residual1")
        # pinned layout: [ref0_w, ref1_w, lsr_up, flow0, flow1, r0, r1]
        parts = [ref_warped, ref1_warped, lsr_up, flow, flow1, residual, residual1]
    hw = ref_warped.shape[-3:-1]
    for p in parts:
        if p.shape[-3:-1] != hw:
            raise ShapeError("all fusion inputs must share one resolution")
    return torch.cat(parts, dim=-1)


def fusion_forward(
    net: FusionNet,
    ref_warped: torch.Tensor,
    lsr_up: torch.Tensor,
    flow: torch.Tensor,
    residual: torch.Tensor,
    ref1_warped: Optional[torch.Tensor] = None,
    flow1: Optional[torch.Tensor] = None,
    residual1: Optional[torch.Tensor] = None,
) -> FusionOutput:
    """Run the fusion network on full-resolution inputs.

    Single-reference input layout is [ref_warped(3), lsr_up(3), flow(2),
    residual(3)]; passing the second-reference tensors switches to the
    19-channel two-reference layout.
    """
    x = _stack_inputs(ref_warped, lsr_up, flow, residual, ref1_warped, flow1, residual1)
    expected = INPUT_CHANNELS[net.mode]
    if x.shape[-1] != expected:
        raise ModeError(
            f"net mode {net.mode} expects {expected} input channels, got {x.shape[-1]}"
        )
    x, squeeze = _batched(x, 3)
    out = net(x)
    return FusionOutput(out.squeeze(0) if squeeze else out, net.mode)


def extract_filters(out: FusionOutput):
    """Reshape filter channels into per-pixel 5x5 kernel banks.

    Kernel tap (i, j) (1-based) comes from channel 5*(i-1) + j - 1; no
    normalization or activation is applied.  Returns one bank in
    single-reference mode, a (bank0, bank1) pair in two-reference mode.
    """
    c = out.channels
    shape = c.shape[:-1] + (5, 5)
    if out.mode == SINGLE_REFERENCE:
        return c[..., :25].reshape(shape)
    return c[..., :25].reshape(shape), c[..., 25:50].reshape(shape)


def extract_mask(out: FusionOutput):
    """Mask(s) from the head output.

    Single-reference: sigmoid of channel 25.  Two-reference: softmax over
    channels 50..52, yielding per-pixel weights for (ref0, ref1, lsr_up)
    that sum to one.
    """
    c = out.channels
    if out.mode == SINGLE_REFERENCE:
        return torch.sigmoid(c[..., 25])
    soft = torch.softmax(c[..., 50:53], dim=-1)
    return soft[..., 0], soft[..., 1], soft[..., 2]


def synthesize_single(
    ref_warped: torch.Tensor,
    lsr_up: torch.Tensor,
    bank: torch.Tensor,
    mask: torch.Tensor,
) -> torch.Tensor:
    """Filter the warped reference, then mask-blend with the upscaled frame."""
    filtered = apply_dynamic_filters(ref_warped, bank)
    return blend_masked(filtered, lsr_up, mask)


def synthesize_multi(
    ref0_wk: torch.Tensor,
    ref1_wk: torch.Tensor,
    lsr_up: torch.Tensor,
    m0: torch.Tensor,
    m1: torch.Tensor,
    m2: torch.Tensor,
) -> torch.Tensor:
    """Three-way per-pixel blend of two filtered references and the upscale."""
    if not (ref0_wk.shape == ref1_wk.shape == lsr_up.shape):
        raise ShapeError("frames must share one resolution")
    if not (m0.shape == m1.shape == m2.shape == ref0_wk.shape[:-1]):
        raise ShapeError("masks must match the frame resolution")
    total = m0 + m1 + m2
    if (total - 1.0).abs().max() > 1e-6:
        raise InvariantError("reference masks must sum to 1 per pixel")
    out = (
        m0.unsqueeze(-1) * ref0_wk
        + m1.unsqueeze(-1) * ref1_wk
        + m2.unsqueeze(-1) * lsr_up
    )
    return out.clamp(0.0, 1.0)


def weight_map(mask: torch.Tensor, bank: torch.Tensor) -> torch.Tensor:
    """Per-pixel share of the output drawn from the reference branch.

    ``W = M * sum(K) / ((1 - M) + M * sum(K))`` with the 25 kernel weights
    summed per pixel, a 1e-8 guard on the denominator, and the result
    clamped to [0, 1].
    """
    if bank.shape[:-2] != mask.shape or bank.shape[-2:] != (5, 5):
        raise ShapeError(
            f"bank {tuple(bank.shape)} does not match mask {tuple(mask.shape)}"
        )
    ksum = bank.sum(dim=(-1, -2))
    num = mask * ksum
    den = (1.0 - mask) + num
    den = torch.where(den.abs() < 1e-8, torch.full_like(den, 1e-8), den)
    return (num / den).clamp(0.0, 1.0)


def convdp_forward(
    net: ConvDP,
    ref_warped: torch.Tensor,
    lsr_up: torch.Tensor,
    flow: torch.Tensor,
    residual: torch.Tensor,
) -> torch.Tensor:
    """Direct convolutional prediction of the output frame, clamped."""
    x = _stack_inputs(ref_warped, lsr_up, flow, residual)
    x, squeeze = _batched(x, 3)
    out = net(x).clamp(0.0, 1.0)
    return out.squeeze(0) if squeeze else out
