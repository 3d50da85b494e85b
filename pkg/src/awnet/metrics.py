"""Quantitative evaluation: PSNR, SSIM, reports and method comparison.

Metrics are computed on full RGB with no border cropping.  Identical
frames report the 99 dB PSNR sentinel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .datamodel import VideoSequence
from .errors import ConfigError, InvariantError, ShapeError

PSNR_SENTINEL = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _to_numpy(frame) -> np.ndarray:
    if isinstance(frame, torch.Tensor):
        return frame.detach().to(torch.float64).numpy()
    if hasattr(frame, "pixels"):
        return frame.pixels.detach().to(torch.float64).numpy()
    return np.asarray(frame, dtype=np.float64)


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over all RGB values.

    Zero MSE returns the 99 dB sentinel; computed values are capped there
    too so the sentinel stays the maximum.
    """
    a = _to_numpy(a)
    b = _to_numpy(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return PSNR_SENTINEL
    return min(10.0 * math.log10(peak * peak / mse), PSNR_SENTINEL)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, peak: float = 1.0) -> float:
    """Single-scale structural similarity.

    11x11 Gaussian window (sigma 1.5), C1 = (0.01 peak)^2,
    C2 = (0.03 peak)^2, computed per channel over valid window positions
    and averaged.
    """
    a = _to_numpy(a)
    b = _to_numpy(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ShapeError(f"frame smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    window = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2

    def filt(img: np.ndarray) -> np.ndarray:
        view = np.lib.stride_tricks.sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW))
        return np.tensordot(view, window, axes=([2, 3], [0, 1]))

    vals = []
    for c in range(a.shape[2]):
        x, y = a[:, :, c], b[:, :, c]
        mu_x = filt(x)
        mu_y = filt(y)
        xx = filt(x * x) - mu_x * mu_x
        yy = filt(y * y) - mu_y * mu_y
        xy = filt(x * y) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


@dataclass
class EvalReport:
    """Per-frame and mean quality metrics for one method."""

    method: str
    frame_psnr: list[float]
    frame_ssim: list[float]
    mean_psnr: float
    mean_ssim: float
    config_fingerprint: str = ""
    frame_mean_weight: Optional[list[float]] = None
    mean_weight: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "frame_psnr": self.frame_psnr,
            "frame_ssim": self.frame_ssim,
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "config_fingerprint": self.config_fingerprint,
            "frame_mean_weight": self.frame_mean_weight,
            "mean_weight": self.mean_weight,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def evaluate(
    output: VideoSequence,
    gt: VideoSequence,
    method: str = "",
    weight_maps: Optional[list] = None,
    config_fingerprint: str = "",
) -> EvalReport:
    """Per-frame PSNR/SSIM against ground truth, plus means."""
    if len(output) != len(gt):
        raise InvariantError(f"length mismatch: {len(output)} vs {len(gt)} frames")
    if output.resolution != gt.resolution:
        raise ShapeError(f"resolution mismatch: {output.resolution} vs {gt.resolution}")
    frame_psnr = [psnr(o.pixels, g.pixels) for o, g in zip(output.frames, gt.frames)]
    frame_ssim = [ssim(o.pixels, g.pixels) for o, g in zip(output.frames, gt.frames)]
    frame_w = None
    mean_w = None
    if weight_maps is not None:
        frame_w = [None if w is None else float(torch.mean(w)) for w in weight_maps]
        known = [w for w in frame_w if w is not None]
        mean_w = float(np.mean(known)) if known else None
    return EvalReport(
        method=method,
        frame_psnr=frame_psnr,
        frame_ssim=frame_ssim,
        mean_psnr=float(np.mean(frame_psnr)),
        mean_ssim=float(np.mean(frame_ssim)),
        config_fingerprint=config_fingerprint,
        frame_mean_weight=frame_w,
        mean_weight=mean_w,
    )


@dataclass
class ComparisonTable:
    """Per-method means, ordered by label, ranked by mean PSNR."""

    rows: list[dict] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["method,mean_psnr,mean_ssim,rank"]
        for r in self.rows:
            lines.append(f"{r['method']},{r['mean_psnr']:.4f},{r['mean_ssim']:.6f},{r['rank']}")
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        lines = [
            "| method | mean PSNR (dB) | mean SSIM | rank |",
            "|---|---|---|---|",
        ]
        for r in self.rows:
            lines.append(
                f"| {r['method']} | {r['mean_psnr']:.4f} | {r['mean_ssim']:.6f} | {r['rank']} |"
            )
        return "\n".join(lines) + "\n"

    def best(self) -> str:
        return min(self.rows, key=lambda r: r["rank"])["method"]


def compare(gt: VideoSequence, methods: dict[str, VideoSequence]) -> ComparisonTable:
    """Evaluate every method against the same ground truth."""
    if not methods:
        raise ConfigError("no methods to compare")
    reports = {label: evaluate(seq, gt, method=label) for label, seq in sorted(methods.items())}
    order = sorted(reports, key=lambda k: -reports[k].mean_psnr)
    ranks = {label: i + 1 for i, label in enumerate(order)}
    rows = [
        {
            "method": label,
            "mean_psnr": rep.mean_psnr,
            "mean_ssim": rep.mean_ssim,
            "rank": ranks[label],
        }
        for label, rep in reports.items()
    ]
    return ComparisonTable(rows)
