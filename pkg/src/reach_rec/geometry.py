"""Axis-aligned bounding-box arithmetic.

Boxes are (left, top, width, height) in continuous pixel units, image
coordinates with y pointing down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple


class Point2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"box field {name} must be finite, got {value!r}")
        if self.w < 0 or self.h < 0:
            raise ValueError(f"box width/height must be non-negative, got w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BoundingBox":
        return cls(x1, y1, x2 - x1, y2 - y1)

    @classmethod
    def around(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        """Box of size ``w`` x ``h`` centred on ``(cx, cy)``."""
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def translated(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)

    def scaled(self, s: float) -> "BoundingBox":
        """Scale about the image origin."""
        return BoundingBox(self.x * s, self.y * s, self.w * s, self.h * s)


def center(b: BoundingBox) -> Point2:
    return Point2(b.x + b.w / 2.0, b.y + b.h / 2.0)


def distance(p: Point2, q: Point2) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 for disjoint boxes and for two zero-area boxes."""
    if a == b:
        # exact 1 for identical boxes; corner arithmetic can lose an ulp
        return 1.0 if a.area > 0 else 0.0
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    # clamp guards against 1 + ulp on identical boxes
    return min(1.0, max(0.0, inter / union))
