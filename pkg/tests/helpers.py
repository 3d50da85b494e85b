"""Shared synthetic data builders and oracles for the test suite."""

from __future__ import annotations

import numpy as np
import torch

from awnet.datamodel import Frame, VideoSequence


def textured(h: int, w: int, seed: int, blur: int = 1) -> torch.Tensor:
    """Random texture with some local structure, normalized to [0, 1]."""
    rng = np.random.default_rng(seed)
    img = rng.random((h + 8, w + 8, 3))
    kernel = np.ones((3, 3, 1)) / 9.0
    for _ in range(blur):
        padded = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
        img = sum(
            padded[dy : dy + img.shape[0], dx : dx + img.shape[1]] * kernel[dy, dx]
            for dy in range(3)
            for dx in range(3)
        )
    img = img[4 : 4 + h, 4 : 4 + w]
    img = (img - img.min()) / (img.max() - img.min() + 1e-12)
    return torch.from_numpy(np.ascontiguousarray(img.astype(np.float32)))


def ramp_frame(h: int, w: int, dtype=torch.float64) -> torch.Tensor:
    """Horizontal ramp r(x) = x / w replicated over rows and channels."""
    row = torch.arange(w, dtype=dtype) / w
    return row.expand(h, w).unsqueeze(-1).repeat(1, 1, 3).contiguous()


def sprite_clip(
    seed: int, frames: int = 16, h: int = 64, w: int = 96, fps: float = 24.0
) -> VideoSequence:
    """Textured background with one textured sprite drifting across it."""
    rng = np.random.default_rng(seed)
    bg = textured(h, w, seed, blur=2)
    sh, sw = 16, 16
    sprite = textured(sh, sw, seed + 1000, blur=0)
    max_x0 = w - sw - int(2.2 * frames) - 1
    x0 = float(rng.integers(0, max(max_x0, 1)))
    y0 = float(rng.integers(4, h - sh - 4))
    vx = float(rng.uniform(0.5, 2.0))
    vy = float(rng.uniform(-0.3, 0.3))
    out = []
    for t in range(frames):
        f = bg.clone()
        xx = int(round(x0 + vx * t))
        yy = min(max(int(round(y0 + vy * t)), 0), h - sh)
        f[yy : yy + sh, xx : xx + sw] = sprite
        out.append(Frame(f.clamp(0, 1), timestamp=t / fps))
    return VideoSequence(out, fps=fps)


def static_clip(seed: int, frames: int = 8, h: int = 64, w: int = 96, fps: float = 24.0) -> VideoSequence:
    """Identical textured content in every frame."""
    base = textured(h, w, seed, blur=1)
    return VideoSequence(
        [Frame(base.clone(), timestamp=t / fps) for t in range(frames)], fps=fps
    )


def translation_clip(
    seed: int, shift: tuple[int, int], frames: int = 2, h: int = 64, w: int = 96
) -> VideoSequence:
    """Frame pairs where frame t+1 is frame t translated by ``shift``."""
    dx, dy = shift
    big = textured(h + abs(dy) * frames + 8, w + abs(dx) * frames + 8, seed, blur=2)
    out = []
    for t in range(frames):
        ox = 4 + (dx * t if dx > 0 else -dx * (frames - 1 - t))
        oy = 4 + (dy * t if dy > 0 else -dy * (frames - 1 - t))
        out.append(Frame(big[oy : oy + h, ox : ox + w].clone(), timestamp=t / 24.0))
    return VideoSequence(out, fps=24.0)


def finite_difference_grads(fn, inputs: list[torch.Tensor], h: float = 1e-5) -> list[torch.Tensor]:
    """Central-difference gradients of a scalar function of several tensors."""
    grads = []
    with torch.no_grad():
        for t in inputs:
            g = torch.zeros_like(t)
            flat = t.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                f_plus = float(fn(*inputs))
                flat[i] = orig - h
                f_minus = float(fn(*inputs))
                flat[i] = orig
                gflat[i] = (f_plus - f_minus) / (2 * h)
            grads.append(g)
    return grads


def max_rel_error(a: torch.Tensor, b: torch.Tensor, floor: float = 1.0) -> float:
    """Max elementwise |a-b| / max(floor, |a|, |b|)."""
    denom = torch.maximum(
        torch.full_like(a, floor), torch.maximum(a.abs(), b.abs())
    )
    return float(((a - b).abs() / denom).max())
