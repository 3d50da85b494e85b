"""Dual-camera high spatiotemporal resolution video synthesis."""

from .datamodel import (
    Frame,
    VideoSequence,
    add_gaussian_noise,
    apply_dynamic_filters,
    blend_masked,
    resize_bicubic,
    upsample_flow,
    warp_backward,
)

__version__ = "0.1.0"

__all__ = [
    "Frame",
    "VideoSequence",
    "add_gaussian_noise",
    "apply_dynamic_filters",
    "blend_masked",
    "resize_bicubic",
    "upsample_flow",
    "warp_backward",
    "__version__",
]
