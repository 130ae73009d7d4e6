"""Per-frame hand/object features: normalized distance, its change, and IOU."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from .data import FrameDetections, Hand, VideoSequence
from .geometry import center, distance, iou

FEATURE_DIM = 3
RELEASE_INCREASES = 4


class FeatureVector(NamedTuple):
    d_norm: float
    delta_d: float
    iou: float


@dataclass
class FeatureStream:
    """Features for one hand over a whole sequence, aligned with its frames.

    Frames without a hand box or any object are kept with ``valid=False``;
    their vector repeats the last valid one (zeros before the first).
    """

    hand: Hand
    frame_indices: List[int]
    vectors: List[FeatureVector]
    valid: List[bool]
    targets: List[Optional[str]] = field(default_factory=list)

    def __len__(self):
        return len(self.vectors)

    @property
    def object_id(self) -> Optional[str]:
        """First object the hand was paired with."""
        return next((t for t in self.targets if t is not None), None)

    def as_array(self) -> np.ndarray:
        if not self.vectors:
            return np.zeros((0, FEATURE_DIM))
        return np.asarray(self.vectors, dtype=np.float64)

    @property
    def n_valid(self) -> int:
        return sum(self.valid)

    @classmethod
    def from_arrays(cls, d_norm, iou_values, hand: Hand = Hand.LEFT, object_id: str = "obj",
                    start: int = 0) -> "FeatureStream":
        """Build a fully valid stream from raw per-frame distance and IOU values."""
        d = [float(v) for v in d_norm]
        vectors = []
        for t, (dv, ov) in enumerate(zip(d, iou_values)):
            delta = 0.0 if t == 0 else dv - d[t - 1]
            vectors.append(FeatureVector(dv, delta, float(ov)))
        n = len(vectors)
        return cls(hand, list(range(start, start + n)), vectors, [True] * n, [object_id] * n)


def frame_diagonal(frame: FrameDetections) -> float:
    w, h = frame.frame_size
    return math.hypot(w, h)


def select_target(frame: FrameDetections, hand: Hand) -> Optional[str]:
    """Object nearest to the hand (ties to the smallest id); None without hand or objects."""
    hb = frame.hand_box(hand)
    if hb is None or not frame.objects:
        return None
    hc = center(hb)
    return min(frame.objects, key=lambda item: (distance(hc, center(item[1])), item[0]))[0]


def _measure(frame: FrameDetections, hand: Hand, object_id: str):
    hb = frame.hand_box(hand)
    ob = frame.object_box(object_id)
    return distance(center(hb), center(ob)) / frame_diagonal(frame), iou(hb, ob)


def feature_stream(seq: VideoSequence, hand: Hand, pairing: str = "sticky") -> FeatureStream:
    """Compute the (d_norm, delta_d, iou) stream for ``hand`` over ``seq``.

    ``per_frame`` pairs the hand with its nearest object on every frame.
    ``sticky`` locks onto the nearest object at the first frame where the
    distance shrinks and keeps it until contact ends or the distance fails
    to shrink for four consecutive frames.
    """
    if pairing not in ("sticky", "per_frame"):
        raise ValueError(f"unknown pairing {pairing!r}")
    vectors: List[FeatureVector] = []
    valid: List[bool] = []
    targets: List[Optional[str]] = []
    last: Optional[FeatureVector] = None
    locked: Optional[str] = None
    increases = 0
    touched = False

    for fd in seq.frames:
        target = None
        if fd.hand_box(hand) is not None and fd.objects:
            if locked is not None and fd.object_box(locked) is not None:
                target = locked
            else:
                locked = None
                target = select_target(fd, hand)
        if target is None:
            vectors.append(last if last is not None else FeatureVector(0.0, 0.0, 0.0))
            valid.append(False)
            targets.append(None)
            continue

        d, ov = _measure(fd, hand, target)
        delta = 0.0 if last is None else d - last.d_norm
        vec = FeatureVector(d, delta, ov)
        vectors.append(vec)
        valid.append(True)
        targets.append(target)

        if pairing == "sticky":
            if locked is None:
                if last is not None and delta < 0:
                    locked, increases, touched = target, 0, ov > 0
            else:
                increases = 0 if delta < 0 else increases + 1
                if ov > 0:
                    touched = True
                if increases >= RELEASE_INCREASES or (touched and ov == 0):
                    locked, increases, touched = None, 0, False
        last = vec

    return FeatureStream(hand, [f.frame_index for f in seq.frames], vectors, valid, targets)
