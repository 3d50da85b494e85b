"""Core raster types and the differentiable image operators.

Conventions used throughout the package:

* Images are channel-last ``torch.Tensor``s of shape ``(H, W, C)`` (or
  ``(B, H, W, C)`` batched) with values in ``[0, 1]`` wherever an operation
  is documented as clamping.
* Flow fields are ``(H, W, 2)`` tensors; channel 0 is ``dx`` (column
  displacement), channel 1 is ``dy`` (row displacement), both in pixels.
  Backward warping samples the source image at ``(x + dx, y + dy)``.
* Filter banks are ``(H, W, 5, 5)`` tensors; ``bank[y, x, i, j]`` weights
  the source pixel at ``(y - 2 + i, x - 2 + j)`` (cross-correlation, no
  kernel flip).
* Out-of-bounds sampling replicates the nearest edge pixel.
* All operators are pure: identical inputs (and seed, where one exists)
  produce bit-identical outputs on a given platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import torch
import torch.nn.functional as F

from .errors import DomainError, ShapeError

# Scales accepted by resize_bicubic, as exact rationals.
SUPPORTED_SCALES = (
    Fraction(1, 8),
    Fraction(1, 4),
    Fraction(1, 3),
    Fraction(1, 2),
    Fraction(2),
    Fraction(3),
    Fraction(4),
    Fraction(8),
)

MIN_FRAME_SIDE = 8  # smallest side supported by the 3-level feature pyramid


@dataclass
class Frame:
    """A single RGB raster with an optional capture timestamp in seconds."""

    pixels: torch.Tensor
    timestamp: Optional[float] = None

    def __post_init__(self):
        p = self.pixels
        if not isinstance(p, torch.Tensor):
            p = torch.as_tensor(p)
            object.__setattr__(self, "pixels", p)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ShapeError(f"frame pixels must be (H, W, 3), got {tuple(p.shape)}")
        if p.shape[0] < MIN_FRAME_SIDE or p.shape[1] < MIN_FRAME_SIDE:
            raise ShapeError(
                f"frame must be at least {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}, got {tuple(p.shape)}"
            )
        if not torch.isfinite(p).all():
            raise DomainError("frame pixels must be finite")
        if p.min() < 0.0 or p.max() > 1.0:
            raise DomainError("frame pixels must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass
class VideoSequence:
    """An ordered list of equally sized frames plus a nominal frame rate."""

    frames: list[Frame] = field(default_factory=list)
    fps: float = 30.0

    def __post_init__(self):
        if self.fps <= 0:
            raise DomainError(f"fps must be positive, got {self.fps}")
        if self.frames:
            res = self.frames[0].resolution
            for f in self.frames:
                if f.resolution != res:
                    raise ShapeError("all frames in a sequence must share one resolution")
            stamps = [f.timestamp for f in self.frames]
            if all(t is not None for t in stamps):
                for a, b in zip(stamps, stamps[1:]):
                    if not b > a:
                        raise DomainError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i) -> Frame:
        return self.frames[i]

    @property
    def resolution(self) -> tuple[int, int]:
        if not self.frames:
            raise ShapeError("empty sequence has no resolution")
        return self.frames[0].resolution


def _batched(t: torch.Tensor, ndim: int) -> tuple[torch.Tensor, bool]:
    """Add a leading batch dim if ``t`` has ``ndim`` dims; report whether it did."""
    if t.ndim == ndim:
        return t.unsqueeze(0), True
    if t.ndim == ndim + 1:
        return t, False
    raise ShapeError(f"expected {ndim} or {ndim + 1} dims, got {t.ndim}")


def _catmull_rom(t: torch.Tensor) -> torch.Tensor:
    """Cubic interpolation kernel with a = -0.5, evaluated at |t|."""
    a = -0.5
    t = t.abs()
    t2 = t * t
    t3 = t2 * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    out = torch.where(t <= 1.0, near, far)
    return torch.where(t < 2.0, out, torch.zeros_like(out))


def _resample_matrix(n_in: int, n_out: int, taps: str, dtype: torch.dtype) -> torch.Tensor:
    """Dense (n_out, n_in) resampling matrix with half-pixel sample centers.

    Out-of-range taps are clamped to the nearest edge sample, which
    accumulates their weight onto the border (edge replication).
    """
    scale = n_out / n_in
    dst = torch.arange(n_out, dtype=dtype)
    src = (dst + 0.5) / scale - 0.5
    base = src.floor()
    frac = src - base
    if taps == "cubic":
        offsets = torch.tensor([-1.0, 0.0, 1.0, 2.0], dtype=dtype)
        weights = _catmull_rom(frac[:, None] - offsets[None, :])
    elif taps == "linear":
        offsets = torch.tensor([0.0, 1.0], dtype=dtype)
        w1 = frac
        weights = torch.stack([1.0 - w1, w1], dim=1)
    else:
        raise ValueError(taps)
    idx = (base[:, None] + offsets[None, :]).long().clamp_(0, n_in - 1)
    mat = torch.zeros((n_out, n_in), dtype=dtype)
    mat.scatter_add_(1, idx, weights)
    return mat


def _separable_resize(image: torch.Tensor, out_h: int, out_w: int, taps: str) -> torch.Tensor:
    """Apply a separable resampling filter along H then W of (B, H, W, C)."""
    b, h, w, c = image.shape
    mat_h = _resample_matrix(h, out_h, taps, image.dtype)
    mat_w = _resample_matrix(w, out_w, taps, image.dtype)
    # rows: (out_h, h) x (B, h, w*c) -> (B, out_h, w, c)
    x = torch.einsum("oh,bhwc->bowc", mat_h, image)
    x = torch.einsum("ow,bhwc->bhoc", mat_w, x)
    return x


def resize_bicubic(image: torch.Tensor, scale) -> torch.Tensor:
    """Resize with a separable 4-tap Catmull-Rom (a = -0.5) kernel.

    ``scale`` must be one of 1/8, 1/4, 1/3, 1/2, 2, 3, 4, 8 and must yield
    integral output dimensions.  Sample positions use half-pixel centers;
    no low-pass prefilter is applied when downscaling, so aliasing is part
    of the simulated sensor degradation.  Output is clamped to [0, 1].
    """
    frac = _validate_scale(scale)
    image, squeeze = _batched(image, 3)
    h, w = image.shape[1], image.shape[2]
    out_h = Fraction(h) * frac
    out_w = Fraction(w) * frac
    if out_h.denominator != 1 or out_w.denominator != 1:
        raise ShapeError(
            f"scale {frac} of {h}x{w} does not give integral output dimensions"
        )
    out = _separable_resize(image, int(out_h), int(out_w), "cubic").clamp_(0.0, 1.0)
    return out.squeeze(0) if squeeze else out


def _validate_scale(scale) -> Fraction:
    if isinstance(scale, Fraction):
        cand = scale
    else:
        cand = Fraction(scale).limit_denominator(1000)
    for s in SUPPORTED_SCALES:
        if abs(float(cand) - float(s)) < 1e-9:
            return s
    raise DomainError(f"unsupported resize scale {scale!r}; valid: {SUPPORTED_SCALES}")


def warp_backward(image: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Backward-warp ``image`` by a full-resolution flow field.

    ``out[y, x] = image[y + dy, x + dx]`` sampled bilinearly with edge
    replication.  Differentiable with respect to both the image and the
    flow.  Shapes: image (..., H, W, C), flow (..., H, W, 2).
    """
    image, squeeze = _batched(image, 3)
    flow, fsq = _batched(flow, 3)
    if fsq != squeeze:
        raise ShapeError("image and flow must be batched consistently")
    b, h, w, c = image.shape
    if flow.shape != (b, h, w, 2):
        raise ShapeError(
            f"flow shape {tuple(flow.shape)} does not match image {tuple(image.shape)}"
        )
    dtype = image.dtype
    gy, gx = torch.meshgrid(
        torch.arange(h, dtype=dtype), torch.arange(w, dtype=dtype), indexing="ij"
    )
    x = gx + flow[..., 0]
    y = gy + flow[..., 1]
    x0 = x.floor()
    y0 = y.floor()
    tx = (x - x0).unsqueeze(-1)
    ty = (y - y0).unsqueeze(-1)
    xi0 = x0.long().clamp_(0, w - 1)
    yi0 = y0.long().clamp_(0, h - 1)
    xi1 = (x0.long() + 1).clamp_(0, w - 1)
    yi1 = (y0.long() + 1).clamp_(0, h - 1)
    bi = torch.arange(b).view(b, 1, 1)
    v00 = image[bi, yi0, xi0]
    v01 = image[bi, yi0, xi1]
    v10 = image[bi, yi1, xi0]
    v11 = image[bi, yi1, xi1]
    top = v00 * (1.0 - tx) + v01 * tx
    bot = v10 * (1.0 - tx) + v11 * tx
    out = top * (1.0 - ty) + bot * ty
    return out.squeeze(0) if squeeze else out


def upsample_flow(
    flow: torch.Tensor, factor: int = 4, out_size: Optional[tuple[int, int]] = None
) -> torch.Tensor:
    """Spatially upsample a quarter-resolution flow field to full resolution.

    Bilinear interpolation with half-pixel centers, then displacement
    values multiplied by 4: flow estimated on the quarter grid is in
    quarter-resolution pixel units and must be re-expressed in
    full-resolution units before warping.  ``out_size`` pins the exact
    output resolution (useful when the full size is not divisible by 4).
    """
    if factor != 4:
        raise DomainError(f"only factor 4 is supported, got {factor}")
    flow, squeeze = _batched(flow, 3)
    if flow.shape[-1] != 2:
        raise ShapeError(f"flow must have 2 channels, got {flow.shape[-1]}")
    h, w = flow.shape[1], flow.shape[2]
    if out_size is None:
        out_h, out_w = h * 4, w * 4
    else:
        out_h, out_w = out_size
        if math.ceil(out_h / 4) != h or math.ceil(out_w / 4) != w:
            raise ShapeError(
                f"flow {h}x{w} is not the quarter-resolution field of {out_h}x{out_w}"
            )
    out = _separable_resize(flow, out_h, out_w, "linear") * 4.0
    return out.squeeze(0) if squeeze else out


def _upsample_by2(field: torch.Tensor, out_h: int, out_w: int, scale_values: float) -> torch.Tensor:
    """Internal helper for pyramid levels: bilinear to (out_h, out_w), values scaled."""
    return _separable_resize(field, out_h, out_w, "linear") * scale_values


def apply_dynamic_filters(image: torch.Tensor, bank: torch.Tensor) -> torch.Tensor:
    """Apply one 5x5 kernel per pixel, shared across channels.

    ``bank[..., y, x, i, j]`` weights ``image[..., y - 2 + i, x - 2 + j]``
    (literal index offsets; cross-correlation, no flip).  Edge-replicate
    padding; the result is NOT clamped -- clamping happens at final
    synthesis.  Differentiable in both inputs.
    """
    image, squeeze = _batched(image, 3)
    bank, bsq = _batched(bank, 4)
    if bsq != squeeze:
        raise ShapeError("image and bank must be batched consistently")
    b, h, w, c = image.shape
    if bank.shape != (b, h, w, 5, 5):
        raise ShapeError(
            f"bank shape {tuple(bank.shape)} does not match image {tuple(image.shape)}"
        )
    x = image.permute(0, 3, 1, 2)  # (B, C, H, W)
    x = F.pad(x, (2, 2, 2, 2), mode="replicate")
    patches = F.unfold(x, kernel_size=5)  # (B, C*25, H*W), taps row-major
    patches = patches.view(b, c, 25, h, w)
    k = bank.reshape(b, h, w, 25).permute(0, 3, 1, 2).unsqueeze(1)  # (B, 1, 25, H, W)
    out = (patches * k).sum(dim=2)  # (B, C, H, W)
    out = out.permute(0, 2, 3, 1)
    return out.squeeze(0) if squeeze else out


def blend_masked(a: torch.Tensor, b: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Per-pixel blend ``mask * a + (1 - mask) * b``, clamped to [0, 1].

    The same scalar mask weights all channels.  Implemented with
    ``torch.lerp`` so that mask values of exactly 0 or 1 reproduce the
    corresponding input bit-exactly, as does ``a == b`` for any mask.
    """
    a, asq = _batched(a, 3)
    b, bsq = _batched(b, 3)
    mask, msq = _batched(mask, 2)
    if not (asq == bsq == msq):
        raise ShapeError("inputs must be batched consistently")
    if a.shape != b.shape or mask.shape != a.shape[:3]:
        raise ShapeError(
            f"shape mismatch: a {tuple(a.shape)}, b {tuple(b.shape)}, mask {tuple(mask.shape)}"
        )
    out = torch.lerp(b, a, mask.unsqueeze(-1)).clamp_(0.0, 1.0)
    return out.squeeze(0) if asq else out


def add_gaussian_noise(image: torch.Tensor, variance: float, seed: int) -> torch.Tensor:
    """Add i.i.d. zero-mean Gaussian noise per channel value, then clamp.

    Deterministic for a fixed seed.  ``variance`` is the noise variance
    (sigma squared), not the standard deviation.
    """
    if variance < 0:
        raise DomainError(f"noise variance must be >= 0, got {variance}")
    if variance == 0:
        return image.clone()
    gen = torch.Generator(device="cpu").manual_seed(int(seed) & 0x7FFFFFFFFFFFFFFF)
    noise = torch.randn(image.shape, generator=gen, dtype=image.dtype)
    return (image + noise * math.sqrt(variance)).clamp_(0.0, 1.0)


def frames_to_tensor(frames: Sequence[Frame]) -> torch.Tensor:
    """Stack frames into a (B, H, W, 3) tensor."""
    return torch.stack([f.pixels for f in frames], dim=0)
