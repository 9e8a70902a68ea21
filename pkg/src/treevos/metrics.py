"""Segmentation quality metrics: region J, boundary F, J&F series.

Conventions: a frame where both masks are empty scores 1.0 (an absent object
correctly predicted absent is a perfect prediction); exactly one empty mask
scores 0.0. Boundary matching uses Chebyshev distance with a tolerance that
defaults to ceil(0.008 * image diagonal).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import distance_transform_cdt

from .core import Mask

__all__ = [
    "FrameScore",
    "region_j",
    "contour_f",
    "default_boundary_tolerance",
    "boundary_pixels",
    "mask_to_bbox",
    "series_and_summary",
    "SeriesSummary",
]


@dataclass(frozen=True)
class FrameScore:
    time: int
    j: float
    f: float

    @property
    def jf(self) -> float:
        return (self.j + self.f) / 2.0


def _check_dims(pred: Mask, gt: Mask):
    if pred.width != gt.width or pred.height != gt.height:
        raise ValueError(
            f"dimension mismatch: {pred.width}x{pred.height} vs {gt.width}x{gt.height}"
        )


def region_j(pred: Mask, gt: Mask) -> float:
    """Jaccard overlap |pred & gt| / |pred | gt|."""
    _check_dims(pred, gt)
    inter = int(np.count_nonzero(pred.bits & gt.bits))
    union = int(np.count_nonzero(pred.bits | gt.bits))
    if union == 0:
        return 1.0
    return inter / union


def boundary_pixels(mask: Mask) -> np.ndarray:
    """Bool grid of mask pixels 4-adjacent to background or the canvas edge."""
    g = mask.to_array()
    interior = np.zeros_like(g)
    interior[1:-1, 1:-1] = (
        g[1:-1, 1:-1]
        & g[:-2, 1:-1]
        & g[2:, 1:-1]
        & g[1:-1, :-2]
        & g[1:-1, 2:]
    )
    return g & ~interior


def default_boundary_tolerance(width: int, height: int) -> int:
    return math.ceil(0.008 * math.hypot(width, height))


def contour_f(pred: Mask, gt: Mask, tolerance_px: Optional[int] = None) -> float:
    """Boundary F-measure with threshold-distance matching.

    Precision is the fraction of predicted boundary pixels within Chebyshev
    distance tolerance_px of some ground-truth boundary pixel; recall is
    symmetric; F = 2PR/(P+R) with F = 0 when P + R = 0 and 1.0 when both
    masks are empty.
    """
    _check_dims(pred, gt)
    if tolerance_px is None:
        tolerance_px = default_boundary_tolerance(pred.width, pred.height)
    pb = boundary_pixels(pred)
    gb = boundary_pixels(gt)
    n_pb = int(pb.sum())
    n_gb = int(gb.sum())
    if n_pb == 0 and n_gb == 0:
        return 1.0
    if n_pb == 0 or n_gb == 0:
        return 0.0
    # Chebyshev distance to the nearest boundary pixel of the other mask.
    dist_to_gb = distance_transform_cdt(~gb, metric="chessboard")
    dist_to_pb = distance_transform_cdt(~pb, metric="chessboard")
    precision = float(np.count_nonzero(dist_to_gb[pb] <= tolerance_px)) / n_pb
    recall = float(np.count_nonzero(dist_to_pb[gb] <= tolerance_px)) / n_gb
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def mask_to_bbox(mask: Mask) -> Optional[tuple[int, int, int, int]]:
    """Tight inclusive (x_min, y_min, x_max, y_max) over true bits, or None."""
    g = mask.to_array()
    rows = np.flatnonzero(g.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(g.any(axis=0))
    return (int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1]))


@dataclass(frozen=True)
class SeriesSummary:
    mean_j: float
    mean_f: float
    mean_jf: float
    segment_jf: tuple[float, ...]


def segment_slices(n: int, segment_count: int) -> list[slice]:
    """Equal-width partitions of range(n); the last segment absorbs the remainder."""
    if segment_count < 1:
        raise ValueError("segment_count must be >= 1")
    if segment_count > n:
        segment_count = n
    width = n // segment_count
    slices = [slice(i * width, (i + 1) * width) for i in range(segment_count - 1)]
    slices.append(slice((segment_count - 1) * width, n))
    return slices


def series_and_summary(
    scores: Sequence[FrameScore], segment_count: int
) -> tuple[list[str], SeriesSummary]:
    """Per-frame CSV rows plus overall and per-temporal-segment means."""
    if not scores:
        raise ValueError("score series must be nonempty")
    rows = ["time,j,f,jf"]
    for s in scores:
        rows.append(f"{s.time},{s.j:.6f},{s.f:.6f},{s.jf:.6f}")
    jf = [s.jf for s in scores]
    summary = SeriesSummary(
        mean_j=sum(s.j for s in scores) / len(scores),
        mean_f=sum(s.f for s in scores) / len(scores),
        mean_jf=sum(jf) / len(scores),
        segment_jf=tuple(
            sum(jf[sl]) / max(1, len(jf[sl])) for sl in segment_slices(len(jf), segment_count)
        ),
    )
    return rows, summary
