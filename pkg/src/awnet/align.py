"""Global homography alignment from point correspondences.

Feature detection is out of scope: correspondences arrive as an (N, 4)
array of ``[x, y, x2, y2]`` rows mapping reference coordinates to target
coordinates.  The estimate uses the normalized direct linear transform:
both point sets are translated to their centroid and scaled to mean
distance sqrt(2) before the SVD least-squares solve.
"""

from __future__ import annotations

import numpy as np

from .datamodel import Frame
from .errors import EstimationError
from .simulator import apply_parallax


def _normalization(points: np.ndarray) -> np.ndarray:
    """Similarity transform taking points to centroid 0, mean distance sqrt(2)."""
    centroid = points.mean(axis=0)
    dist = np.linalg.norm(points - centroid, axis=1).mean()
    if dist < 1e-12:
        raise EstimationError("degenerate correspondences: all points coincide")
    s = np.sqrt(2.0) / dist
    return np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )


def estimate_homography(pairs: np.ndarray) -> np.ndarray:
    """Least-squares homography H with ``target ~ H @ ref`` (homogeneous).

    Requires at least 4 correspondences in general position; a
    configuration of rank < 8 raises ``EstimationError``.  The result is
    scaled so that H[2, 2] = 1 whenever that entry is nonnegligible.
    """
    pairs = np.asarray(pairs, dtype=np.float64)
    if pairs.ndim != 2 or pairs.shape[1] != 4:
        raise EstimationError(f"pairs must be (N, 4), got {pairs.shape}")
    if pairs.shape[0] < 4:
        raise EstimationError(f"need >= 4 correspondences, got {pairs.shape[0]}")
    if not np.isfinite(pairs).all():
        raise EstimationError("correspondences must be finite")
    src, dst = pairs[:, :2], pairs[:, 2:]
    t_src = _normalization(src)
    t_dst = _normalization(dst)
    src_n = (np.column_stack([src, np.ones(len(src))]) @ t_src.T)[:, :2]
    dst_n = (np.column_stack([dst, np.ones(len(dst))]) @ t_dst.T)[:, :2]

    x, y = src_n[:, 0], src_n[:, 1]
    u, v = dst_n[:, 0], dst_n[:, 1]
    zero = np.zeros_like(x)
    one = np.ones_like(x)
    rows_u = np.stack([-x, -y, -one, zero, zero, zero, u * x, u * y, u], axis=1)
    rows_v = np.stack([zero, zero, zero, -x, -y, -one, v * x, v * y, v], axis=1)
    a = np.concatenate([rows_u, rows_v], axis=0)

    _, s, vt = np.linalg.svd(a)
    if s[7] <= 1e-10 * s[0]:
        raise EstimationError("degenerate correspondence configuration (rank < 8)")
    h_n = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_n @ t_src
    if abs(h[2, 2]) > 1e-9:
        h = h / h[2, 2]
    return h


def reprojection_error(h: np.ndarray, pairs: np.ndarray) -> float:
    """Mean Euclidean distance between H @ ref and target, in pixels."""
    pairs = np.asarray(pairs, dtype=np.float64)
    src = np.column_stack([pairs[:, :2], np.ones(len(pairs))])
    proj = src @ np.asarray(h, dtype=np.float64).T
    proj_xy = proj[:, :2] / proj[:, 2:3]
    return float(np.linalg.norm(proj_xy - pairs[:, 2:], axis=1).mean())


def align_reference(ref: Frame, h: np.ndarray) -> Frame:
    """Warp the reference frame into the target's coordinate system."""
    return apply_parallax(ref, h)
