"""PNG frame and sequence-directory serialization.

A sequence on disk is a directory of zero-padded numbered frames
(``frame_000001.png`` ...) plus a ``manifest.json``::

    {"fps": 30.0, "width": 96, "height": 64, "count": 16, "color_space": "srgb8"}

``color_space`` selects 8-bit or 16-bit PNG quantization.  In-memory math
is always floating point in [0, 1].
"""

from __future__ import annotations

import json
from pathlib import Path

import cv2
import numpy as np
import torch

from .datamodel import Frame, VideoSequence
from .errors import ConfigError, ShapeError

FRAME_PATTERN = "frame_{:06d}.png"
COLOR_SPACES = {"srgb8": 255, "srgb16": 65535}


def save_frame_png(path, frame, color_space: str = "srgb8") -> None:
    """Quantize a frame (or (H, W, 3) tensor in [0, 1]) to PNG."""
    if color_space not in COLOR_SPACES:
        raise ConfigError(f"unknown color space {color_space!r}")
    pixels = frame.pixels if isinstance(frame, Frame) else torch.as_tensor(frame)
    peak = COLOR_SPACES[color_space]
    arr = torch.round(pixels.detach().to(torch.float64) * peak).numpy()
    arr = arr.astype(np.uint8 if peak == 255 else np.uint16)
    ok = cv2.imwrite(str(path), arr[:, :, ::-1])  # RGB -> BGR
    if not ok:
        raise OSError(f"failed to write PNG {path}")


def load_frame_png(path, timestamp: float | None = None) -> Frame:
    """Load an 8- or 16-bit PNG into a float32 frame in [0, 1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise OSError(f"failed to read PNG {path}")
    if raw.ndim == 2:
        raw = np.stack([raw] * 3, axis=-1)
    if raw.shape[2] == 4:
        raw = raw[:, :, :3]
    peak = 255 if raw.dtype == np.uint8 else 65535
    rgb = raw[:, :, ::-1].astype(np.float32) / peak
    return Frame(torch.from_numpy(np.ascontiguousarray(rgb)), timestamp)


def save_gray_png(path, values: torch.Tensor) -> None:
    """Write a single-channel map in [0, 1] as an 8-bit grayscale PNG."""
    arr = torch.round(values.detach().clamp(0, 1).to(torch.float64) * 255).numpy()
    ok = cv2.imwrite(str(path), arr.astype(np.uint8))
    if not ok:
        raise OSError(f"failed to write PNG {path}")


def load_gray_png(path) -> torch.Tensor:
    raw = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise OSError(f"failed to read PNG {path}")
    return torch.from_numpy(raw.astype(np.float32) / 255.0)


def save_sequence(directory, seq: VideoSequence, color_space: str = "srgb8") -> None:
    """Write frames and manifest into ``directory`` (created if missing)."""
    if not seq.frames:
        raise ShapeError("cannot save an empty sequence")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    h, w = seq.resolution
    for i, frame in enumerate(seq.frames):
        save_frame_png(directory / FRAME_PATTERN.format(i + 1), frame, color_space)
    manifest = {
        "fps": float(seq.fps),
        "width": w,
        "height": h,
        "count": len(seq.frames),
        "color_space": color_space,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_sequence(directory) -> VideoSequence:
    """Load a manifest + PNG sequence; timestamps become index / fps."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no manifest.json in {directory}")
    manifest = json.loads(manifest_path.read_text())
    for key in ("fps", "width", "height", "count", "color_space"):
        if key not in manifest:
            raise ConfigError(f"manifest missing key {key!r} in {directory}")
    if manifest["color_space"] not in COLOR_SPACES:
        raise ConfigError(f"unknown color space {manifest['color_space']!r}")
    fps = float(manifest["fps"])
    frames = []
    for i in range(int(manifest["count"])):
        path = directory / FRAME_PATTERN.format(i + 1)
        frame = load_frame_png(path, timestamp=i / fps)
        if frame.resolution != (manifest["height"], manifest["width"]):
            raise ShapeError(
                f"{path} is {frame.resolution}, manifest says "
                f"({manifest['height']}, {manifest['width']})"
            )
        frames.append(frame)
    return VideoSequence(frames, fps)


def load_correspondences(path) -> np.ndarray:
    """Read point correspondences ``{"pairs": [[x, y, x2, y2], ...]}``."""
    data = json.loads(Path(path).read_text())
    if "pairs" not in data:
        raise ConfigError(f"correspondence file {path} missing 'pairs'")
    pairs = np.asarray(data["pairs"], dtype=np.float64)
    if pairs.ndim != 2 or pairs.shape[1] != 4:
        raise ConfigError("'pairs' must be a list of [x, y, x2, y2] rows")
    return pairs


def save_correspondences(path, pairs: np.ndarray) -> None:
    Path(path).write_text(json.dumps({"pairs": np.asarray(pairs).tolist()}, indent=2))
