"""Synthesize dual-camera input pairs and training triples from ground truth.

The high-resolution low-frame-rate stream models exposure integration: each
output frame is the mean of ``exposure_frames`` consecutive ground-truth
frames centered on the group's synchronization index.  The low-resolution
high-frame-rate stream is bicubic-downscaled and optionally corrupted with
per-frame Gaussian sensor noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np
import torch

from .datamodel import Frame, VideoSequence, add_gaussian_noise, resize_bicubic, warp_backward
from .errors import ConfigError, CropError, DomainError, InsufficientFramesError, ShapeError

SUPPORTED_SPATIAL_FACTORS = (2, 3, 4, 8)
TRAIN_CROP = (256, 384)  # (height, width)


def sync_index(m: int) -> int:
    """Index of the synchronization frame within a group of m."""
    if m < 1:
        raise DomainError(f"temporal factor must be >= 1, got {m}")
    return math.ceil(m / 2) - 1


@dataclass
class DegradationConfig:
    """Parameters of the simulated dual-camera degradation."""

    n: int = 4
    m: int = 8
    exposure_frames: int = 1
    noise_variance: float = 0.0
    parallax_homography: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        if self.n not in SUPPORTED_SPATIAL_FACTORS:
            raise ConfigError(
                f"spatial factor n must be one of {SUPPORTED_SPATIAL_FACTORS}, got {self.n}"
            )
        if self.m < 2:
            raise ConfigError(f"temporal factor m must be >= 2, got {self.m}")
        if not 1 <= self.exposure_frames <= self.m:
            raise ConfigError(
                f"exposure_frames must be in [1, m={self.m}], got {self.exposure_frames}"
            )
        if self.noise_variance < 0:
            raise ConfigError(f"noise_variance must be >= 0, got {self.noise_variance}")
        if self.parallax_homography is not None:
            h = np.asarray(self.parallax_homography, dtype=np.float64)
            if h.shape != (3, 3):
                raise ConfigError("parallax_homography must be 3x3")
            if abs(np.linalg.det(h)) <= 1e-9:
                raise ConfigError("parallax_homography must be invertible")
            self.parallax_homography = h

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "exposure_frames": self.exposure_frames,
            "noise_variance": self.noise_variance,
            "parallax_homography": None
            if self.parallax_homography is None
            else np.asarray(self.parallax_homography).tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationConfig":
        known = {"n", "m", "exposure_frames", "noise_variance", "parallax_homography", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown degradation config keys: {sorted(unknown)}")
        h = d.get("parallax_homography")
        return cls(
            n=int(d.get("n", 4)),
            m=int(d.get("m", 8)),
            exposure_frames=int(d.get("exposure_frames", 1)),
            noise_variance=float(d.get("noise_variance", 0.0)),
            parallax_homography=None if h is None else np.asarray(h, dtype=np.float64),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class TrainingTriple:
    """(reference, low-res target, ground truth) for one training sample."""

    reference: Frame
    low_res_target: Frame
    ground_truth: Frame

    def __post_init__(self):
        if self.reference.resolution != self.ground_truth.resolution:
            raise ShapeError("reference and ground truth must share resolution")
        gh, gw = self.ground_truth.resolution
        lh, lw = self.low_res_target.resolution
        if lh == 0 or gh % lh != 0 or gw % lw != 0 or gh // lh != gw // lw:
            raise ShapeError(
                f"ground truth {gh}x{gw} is not an integer multiple of target {lh}x{lw}"
            )

    @property
    def scale_factor(self) -> int:
        return self.ground_truth.height // self.low_res_target.height


def exposure_window(center: int, exposure_frames: int) -> tuple[int, int]:
    """Inclusive frame-index window of an exposure centered at ``center``.

    For even lengths the center is the earlier of the two middle frames,
    matching the synchronization convention, so a full-group exposure
    covers the group exactly.
    """
    e = exposure_frames
    return center - (e - 1) // 2, center + e // 2


def make_hsr_lfr(gt: VideoSequence, cfg: DegradationConfig) -> VideoSequence:
    """Simulate the high-spatial-resolution low-frame-rate camera.

    One output frame per ``m`` input frames (trailing remainder dropped),
    each the arithmetic mean of ``exposure_frames`` consecutive frames
    around the synchronization index, optionally warped to a second
    viewpoint by the parallax homography.
    """
    m = cfg.m
    if len(gt) < m:
        raise InsufficientFramesError(f"need at least m={m} frames, got {len(gt)}")
    groups = len(gt) // m
    c_local = sync_index(m)
    out_frames = []
    for g in range(groups):
        center = g * m + c_local
        lo, hi = exposure_window(center, cfg.exposure_frames)
        if cfg.exposure_frames == 1:
            mean = gt[center].pixels.clone()
        else:
            mean = torch.stack([gt[i].pixels for i in range(lo, hi + 1)], dim=0).mean(dim=0)
        if cfg.parallax_homography is not None:
            mean = apply_parallax(Frame(mean.clamp(0, 1)), cfg.parallax_homography).pixels
        out_frames.append(Frame(mean.clamp(0.0, 1.0), timestamp=gt[center].timestamp))
    return VideoSequence(out_frames, fps=gt.fps / m)


def make_lsr_hfr(gt: VideoSequence, cfg: DegradationConfig) -> VideoSequence:
    """Simulate the low-spatial-resolution high-frame-rate camera.

    Every frame is bicubic-downscaled by 1/n, then Gaussian noise with a
    per-frame stream (seed XOR frame index) is added.  Frame rate and
    timestamps are preserved.
    """
    h, w = gt.resolution
    if h % cfg.n != 0 or w % cfg.n != 0:
        raise ShapeError(f"resolution {h}x{w} not divisible by n={cfg.n}")
    frames = []
    for i, frame in enumerate(gt.frames):
        small = resize_bicubic(frame.pixels, Fraction(1, cfg.n))
        if cfg.noise_variance > 0:
            small = add_gaussian_noise(small, cfg.noise_variance, cfg.seed ^ i)
        frames.append(Frame(small, timestamp=frame.timestamp))
    return VideoSequence(frames, fps=gt.fps)


def make_training_triple(
    septuplet: VideoSequence, cfg: DegradationConfig, rng_seed: int
) -> TrainingTriple:
    """Build a (reference, low-res target, ground truth) triple.

    Picks a random consecutive pair (j, j+1) from a 7-frame clip, crops
    both to 256x384 with one shared window, and derives the low-res target
    by bicubic 1/n of the cropped ground truth.  Deterministic per seed.
    """
    if len(septuplet) != 7:
        raise ShapeError(f"expected a 7-frame clip, got {len(septuplet)}")
    ch, cw = TRAIN_CROP
    h, w = septuplet.resolution
    if h < ch or w < cw:
        raise CropError(f"frames {h}x{w} smaller than crop {ch}x{cw}")
    rng = np.random.default_rng(rng_seed)
    j = int(rng.integers(0, 6))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    ref = septuplet[j].pixels[top : top + ch, left : left + cw]
    gt = septuplet[j + 1].pixels[top : top + ch, left : left + cw]
    low = resize_bicubic(gt, Fraction(1, cfg.n))
    return TrainingTriple(
        reference=Frame(ref.clone(), septuplet[j].timestamp),
        low_res_target=Frame(low, septuplet[j + 1].timestamp),
        ground_truth=Frame(gt.clone(), septuplet[j + 1].timestamp),
    )


def homography_flow(
    h: int, w: int, matrix: np.ndarray, dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """Backward flow field realizing ``matrix``: out(p) = in(H^-1 p)."""
    hm = np.asarray(matrix, dtype=np.float64)
    if abs(np.linalg.det(hm)) <= 1e-9:
        raise DomainError("homography must be invertible")
    inv = np.linalg.inv(hm)
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    ones = np.ones_like(xs)
    pts = np.stack([xs, ys, ones], axis=-1) @ inv.T
    src_x = pts[..., 0] / pts[..., 2]
    src_y = pts[..., 1] / pts[..., 2]
    flow = np.stack([src_x - xs, src_y - ys], axis=-1)
    return torch.from_numpy(flow).to(dtype)


def apply_parallax(frame: Frame, matrix: np.ndarray) -> Frame:
    """Inverse-warp a frame by a homography (bilinear, edge replication)."""
    h, w = frame.resolution
    flow = homography_flow(h, w, matrix, dtype=frame.pixels.dtype)
    return Frame(warp_backward(frame.pixels, flow).clamp(0.0, 1.0), frame.timestamp)
