"""Axis-aligned box primitives and the geometric scores shared by both
association stages and the metrics.

Boxes are ``(x, y, w, h)`` with ``(x, y)`` the top-left corner; a box covers
the half-open rectangle ``[x, x + w) x [y, y + h)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class InvalidBoxError(ValueError):
    """Raised when a box has non-positive or non-finite extent."""


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidBoxError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise InvalidBoxError(f"box needs w > 0 and h > 0, got {vals}")

    @classmethod
    def from_seq(cls, vals: Sequence[float]) -> "BBox":
        x, y, w, h = (float(v) for v in vals)
        return cls(x, y, w, h)

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BBox":
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def diag(self) -> float:
        return math.hypot(self.w, self.h)

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=float)

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)

    def scale(self, k: float) -> "BBox":
        """Scale about the origin by ``k > 0``."""
        return BBox(self.x * k, self.y * k, self.w * k, self.h * k)

    def expand(self, factor: float) -> "BBox":
        """Scale about the box's own center."""
        cx, cy = self.center
        return BBox.from_center(cx, cy, self.w * factor, self.h * factor)


@dataclass(frozen=True)
class ScoreWeights:
    w_dist: float = 1.0
    w_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.w_dist < 0 or self.w_scale < 0 or self.w_dist + self.w_scale <= 0:
            raise ValueError(f"invalid score weights {self}")


@dataclass(frozen=True)
class SimilarityThresholds:
    theta_cos: float = 0.9
    max_size_ratio: float = 2.0

    def __post_init__(self) -> None:
        if not -1.0 <= self.theta_cos <= 1.0:
            raise ValueError(f"theta_cos must lie in [-1, 1], got {self.theta_cos}")
        if self.max_size_ratio < 1.0:
            raise ValueError(f"max_size_ratio must be >= 1, got {self.max_size_ratio}")


def intersection_area(b1: BBox, b2: BBox) -> float:
    iw = min(b1.x2, b2.x2) - max(b1.x, b2.x)
    ih = min(b1.y2, b2.y2) - max(b1.y, b2.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def _extent_area(b: BBox) -> float:
    # same arithmetic as the intersection, so iou(b, b) is exactly 1
    return (b.x2 - b.x) * (b.y2 - b.y)


def iou(b1: BBox, b2: BBox) -> float:
    inter = intersection_area(b1, b2)
    return inter / (_extent_area(b1) + _extent_area(b2) - inter)


def dist_score(b1: BBox, b2: BBox) -> float:
    """One minus the center distance over the larger diagonal.

    Not clamped: far-apart boxes get negative values, which keeps them ordered.
    """
    (c1x, c1y), (c2x, c2y) = b1.center, b2.center
    return 1.0 - math.hypot(c1x - c2x, c1y - c2y) / max(b1.diag, b2.diag)


def scale_score(b1: BBox, b2: BBox) -> float:
    a1, a2 = b1.area, b2.area
    return min(a1, a2) / max(a1, a2)


def composite_score(b1: BBox, b2: BBox, weights: ScoreWeights = ScoreWeights()) -> float:
    return weights.w_dist * dist_score(b1, b2) + weights.w_scale * scale_score(b1, b2)


def size_ok(b1: BBox, b2: BBox, max_ratio: float = 2.0) -> bool:
    wr = max(b1.w, b2.w) / min(b1.w, b2.w)
    hr = max(b1.h, b2.h) / min(b1.h, b2.h)
    return wr <= max_ratio and hr <= max_ratio


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors."""
    return float(np.dot(a, b))


def are_similar(
    b1: BBox,
    b2: BBox,
    e1: np.ndarray | None,
    e2: np.ndarray | None,
    th: SimilarityThresholds = SimilarityThresholds(),
) -> bool:
    """Geometric and appearance consistency check.

    True iff the sizes are compatible, the boxes overlap, and the embeddings
    have cosine >= ``th.theta_cos``. When either embedding is ``None`` the
    appearance clause is skipped (geometry-only mode, used when no imagery or
    precomputed embeddings are available).
    """
    if not size_ok(b1, b2, th.max_size_ratio):
        return False
    if iou(b1, b2) <= 0.0:
        return False
    if e1 is None or e2 is None:
        return True
    return cosine(e1, e2) >= th.theta_cos


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(n, 4)`` and ``(m, 4)`` xywh arrays."""
    a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    ax1, ay1 = a[:, 0:1], a[:, 1:2]
    ax2, ay2 = ax1 + a[:, 2:3], ay1 + a[:, 3:4]
    bx1, by1 = b[:, 0], b[:, 1]
    bx2, by2 = bx1 + b[:, 2], by1 + b[:, 3]
    iw = np.clip(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0.0, None)
    ih = np.clip(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0.0, None)
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out
