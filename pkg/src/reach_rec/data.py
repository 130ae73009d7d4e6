"""Detection/annotation ingestion, per-frame labels and dataset splitting.

File formats
------------
detections.jsonl
    One JSON object per frame::

        {"video_id": "v1", "frame": 0, "frame_w": 640, "frame_h": 480,
         "boxes": [{"label": "left_hand", "x": 10.0, "y": 20.0, "w": 32.0, "h": 32.0},
                   {"label": "object", "id": "toy1", "x": 100.0, "y": 90.0, "w": 40.0, "h": 40.0}]}

    ``label`` is one of infant, left_hand, right_hand, object; ``id`` is only
    required for objects. Boxes given as corners (x1, y1, x2, y2) are accepted
    and converted.

annotations.csv
    Header ``video_id,reach_id,hand,object_id,onset_frame,offset_frame`` with
    hand in {L, R}.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import IO, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .geometry import BoundingBox

ANNOTATION_HEADER = ["video_id", "reach_id", "hand", "object_id", "onset_frame", "offset_frame"]
BOX_LABELS = ("infant", "left_hand", "right_hand", "object")
ANNOTATOR_TOLERANCE = 3


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class Hand(str, Enum):
    LEFT = "L"
    RIGHT = "R"

    @property
    def box_label(self) -> str:
        return "left_hand" if self is Hand.LEFT else "right_hand"


class FrameLabel(IntEnum):
    NoR = 0
    RN = 1
    R = 2
    RF = 3


@dataclass(frozen=True)
class FrameDetections:
    frame_index: int
    frame_size: Tuple[float, float]
    infant: Optional[BoundingBox] = None
    left_hand: Optional[BoundingBox] = None
    right_hand: Optional[BoundingBox] = None
    objects: Tuple[Tuple[str, BoundingBox], ...] = ()

    def __post_init__(self):
        if self.frame_index < 0:
            raise DataError(f"frame index must be non-negative, got {self.frame_index}")
        w, h = self.frame_size
        if not (w > 0 and h > 0):
            raise DataError(f"frame size must be positive, got {self.frame_size}")
        ids = [oid for oid, _ in self.objects]
        if len(set(ids)) != len(ids):
            raise DataError(f"duplicate object id in frame {self.frame_index}: {ids}")

    def hand_box(self, hand: Hand) -> Optional[BoundingBox]:
        return self.left_hand if hand is Hand.LEFT else self.right_hand

    def object_box(self, object_id: str) -> Optional[BoundingBox]:
        for oid, box in self.objects:
            if oid == object_id:
                return box
        return None


@dataclass
class VideoSequence:
    video_id: str
    frames: List[FrameDetections]

    def __post_init__(self):
        if not self.frames:
            raise DataError(f"video {self.video_id!r} has no frames")
        idx = [f.frame_index for f in self.frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise DataError(f"frame indices of {self.video_id!r} must be strictly increasing")

    def __len__(self):
        return len(self.frames)

    @property
    def first_frame(self) -> int:
        return self.frames[0].frame_index

    @property
    def last_frame(self) -> int:
        return self.frames[-1].frame_index

    def frame_gaps(self) -> List[Tuple[int, int]]:
        """(previous, next) index pairs where frames are missing."""
        idx = [f.frame_index for f in self.frames]
        return [(a, b) for a, b in zip(idx, idx[1:]) if b != a + 1]

    def slice(self, start: int, stop: int, video_id: Optional[str] = None) -> "VideoSequence":
        """Frames with ``start <= frame_index < stop``."""
        frames = [f for f in self.frames if start <= f.frame_index < stop]
        return VideoSequence(video_id or self.video_id, frames)


@dataclass(frozen=True)
class ReachEvent:
    hand: Hand
    object_id: str
    onset_frame: int
    offset_frame: int
    reach_id: str = ""

    def __post_init__(self):
        if self.onset_frame >= self.offset_frame:
            raise DataError(
                f"reach onset ({self.onset_frame}) must precede offset ({self.offset_frame})"
            )

    @property
    def duration(self) -> int:
        return self.offset_frame - self.onset_frame


# ---------------------------------------------------------------------------
# detections.jsonl


def _as_text_lines(stream: Union[bytes, str, IO]) -> Iterable[str]:
    if isinstance(stream, bytes):
        stream = stream.decode("utf-8")
    if isinstance(stream, str):
        return stream.splitlines()
    return (line.decode("utf-8") if isinstance(line, bytes) else line for line in stream)


def _parse_box(raw: dict) -> BoundingBox:
    if "x1" in raw:
        x1, y1, x2, y2 = (float(raw[k]) for k in ("x1", "y1", "x2", "y2"))
        return BoundingBox.from_corners(x1, y1, x2, y2)
    return BoundingBox(float(raw["x"]), float(raw["y"]), float(raw["w"]), float(raw["h"]))


def _frame_from_record(rec: dict) -> Tuple[str, FrameDetections]:
    video_id = str(rec["video_id"])
    frame = rec["frame"]
    if not isinstance(frame, int) or isinstance(frame, bool):
        raise DataError(f"frame must be an integer, got {frame!r}")
    single: Dict[str, BoundingBox] = {}
    objects: List[Tuple[str, BoundingBox]] = []
    for raw in rec.get("boxes", []):
        label = raw.get("label")
        if label not in BOX_LABELS:
            raise DataError(f"unknown box label {label!r}")
        try:
            box = _parse_box(raw)
        except ValueError as exc:
            raise DataError(f"invalid {label} box: {exc}") from None
        if label == "object":
            if "id" not in raw:
                raise DataError("object box without id")
            objects.append((str(raw["id"]), box))
        else:
            if label in single:
                raise DataError(f"more than one {label} box")
            single[label] = box
    fd = FrameDetections(
        frame_index=frame,
        frame_size=(float(rec["frame_w"]), float(rec["frame_h"])),
        infant=single.get("infant"),
        left_hand=single.get("left_hand"),
        right_hand=single.get("right_hand"),
        objects=tuple(objects),
    )
    return video_id, fd


def parse_detections(stream: Union[bytes, str, IO]) -> List[VideoSequence]:
    """Parse detections JSON-Lines into sequences, grouped by video in first-seen order."""
    grouped: Dict[str, Dict[int, FrameDetections]] = {}
    for lineno, line in enumerate(_as_text_lines(stream), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            if not isinstance(rec, dict):
                raise DataError("record is not a JSON object")
            video_id, fd = _frame_from_record(rec)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            msg = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
            raise DataError(f"detections line {lineno}: {msg}") from None
        frames = grouped.setdefault(video_id, {})
        if fd.frame_index in frames:
            raise DataError(
                f"detections line {lineno}: duplicate frame {fd.frame_index} for video {video_id!r}"
            )
        frames[fd.frame_index] = fd
    return [
        VideoSequence(vid, [frames[k] for k in sorted(frames)]) for vid, frames in grouped.items()
    ]


def _box_record(label: str, box: BoundingBox, object_id: Optional[str] = None) -> dict:
    rec = {"label": label}
    if object_id is not None:
        rec["id"] = object_id
    rec.update(x=box.x, y=box.y, w=box.w, h=box.h)
    return rec


def frame_record(video_id: str, fd: FrameDetections) -> dict:
    boxes = []
    for label in ("infant", "left_hand", "right_hand"):
        box = getattr(fd, label)
        if box is not None:
            boxes.append(_box_record(label, box))
    boxes.extend(_box_record("object", box, oid) for oid, box in fd.objects)
    return {
        "video_id": video_id,
        "frame": fd.frame_index,
        "frame_w": fd.frame_size[0],
        "frame_h": fd.frame_size[1],
        "boxes": boxes,
    }


def serialize_detections(sequences: Sequence[VideoSequence]) -> str:
    out = io.StringIO()
    for seq in sequences:
        for fd in seq.frames:
            out.write(json.dumps(frame_record(seq.video_id, fd), separators=(",", ":")))
            out.write("\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# annotations.csv


def _parse_hand(tag: str) -> Hand:
    try:
        return Hand(tag.strip().upper())
    except ValueError:
        raise DataError(f"unknown hand tag {tag!r} (expected L or R)") from None


def parse_annotations(stream: Union[bytes, str, IO]) -> Dict[str, List[ReachEvent]]:
    """Parse annotations CSV into events grouped by video id (file order preserved)."""
    lines = list(_as_text_lines(stream))
    reader = csv.reader(lines)
    grouped: Dict[str, List[ReachEvent]] = {}
    header_seen = False
    for lineno, row in enumerate(reader, start=1):
        if not row or not any(cell.strip() for cell in row):
            continue
        cells = [c.strip() for c in row]
        if not header_seen and cells[0] == "video_id":
            if cells != ANNOTATION_HEADER:
                raise DataError(f"annotations line {lineno}: unexpected header {cells}")
            header_seen = True
            continue
        if len(cells) != len(ANNOTATION_HEADER):
            raise DataError(
                f"annotations line {lineno}: expected {len(ANNOTATION_HEADER)} columns, got {len(cells)}"
            )
        video_id, reach_id, hand, object_id, onset, offset = cells
        try:
            event = ReachEvent(_parse_hand(hand), object_id, int(onset), int(offset), reach_id)
        except ValueError as exc:
            raise DataError(f"annotations line {lineno}: {exc}") from None
        grouped.setdefault(video_id, []).append(event)
    return grouped


def serialize_annotations(events_by_video: Dict[str, Sequence[ReachEvent]]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(ANNOTATION_HEADER)
    for video_id, events in events_by_video.items():
        for ev in events:
            writer.writerow(
                [video_id, ev.reach_id, ev.hand.value, ev.object_id, ev.onset_frame, ev.offset_frame]
            )
    return out.getvalue()


# ---------------------------------------------------------------------------
# labels


def labels_from_events(
    events: Iterable[ReachEvent], n_frames: int, hand: Optional[Hand] = None, start: int = 0
) -> List[FrameLabel]:
    """Per-frame labels for ``n_frames`` frames beginning at frame ``start``.

    Only events of ``hand`` are used (all events when ``hand`` is None). Events
    of one hand must not share any frame.
    """
    labels = [FrameLabel.NoR] * n_frames
    owner: List[Optional[ReachEvent]] = [None] * n_frames
    for ev in events:
        if hand is not None and ev.hand is not hand:
            continue
        for f in range(ev.onset_frame, ev.offset_frame + 1):
            pos = f - start
            if not 0 <= pos < n_frames:
                continue
            if owner[pos] is not None:
                raise DataError(
                    f"overlapping events for hand {ev.hand.value}: frame {f} belongs to "
                    f"({owner[pos].onset_frame},{owner[pos].offset_frame}) and "
                    f"({ev.onset_frame},{ev.offset_frame})"
                )
            owner[pos] = ev
            if f == ev.onset_frame:
                labels[pos] = FrameLabel.RN
            elif f == ev.offset_frame:
                labels[pos] = FrameLabel.RF
            else:
                labels[pos] = FrameLabel.R
    return labels


def events_from_labels(labels: Sequence[int], warn: bool = True) -> List[Tuple[int, int]]:
    """Recover (onset, offset) pairs from a label sequence.

    A run must read RN, R*, RF. Runs that are cut short (NoR or a new RN before
    RF, or the sequence ends) and stray R/RF frames are dropped with a warning.
    """
    events: List[Tuple[int, int]] = []
    problems: List[str] = []
    onset: Optional[int] = None
    for i, lab in enumerate(labels):
        lab = FrameLabel(lab)
        if lab is FrameLabel.RN:
            if onset is not None:
                problems.append(f"onset at {onset} has no offset before new onset at {i}")
            onset = i
        elif lab is FrameLabel.RF:
            if onset is None:
                problems.append(f"offset at {i} without onset")
            else:
                events.append((onset, i))
                onset = None
        elif lab is FrameLabel.R:
            if onset is None:
                problems.append(f"reach frame {i} outside an onset/offset run")
        else:
            if onset is not None:
                problems.append(f"onset at {onset} interrupted by no-reach at {i}")
                onset = None
    if onset is not None:
        problems.append(f"onset at {onset} has no offset")
    if warn and problems:
        warnings.warn("malformed label runs dropped: " + "; ".join(problems), stacklevel=2)
    return events


def sequence_labels(seq: VideoSequence, events: Iterable[ReachEvent], hand: Hand) -> List[FrameLabel]:
    """Labels for every frame present in ``seq`` (gaps are simply skipped)."""
    n = seq.last_frame - seq.first_frame + 1
    dense = labels_from_events(events, n, hand, start=seq.first_frame)
    return [dense[f.frame_index - seq.first_frame] for f in seq.frames]


# ---------------------------------------------------------------------------
# annotation validation


@dataclass
class ValidationReport:
    flags: List[str] = field(default_factory=list)
    merged: List[ReachEvent] = field(default_factory=list)
    disagreements: List[Tuple[ReachEvent, Optional[ReachEvent]]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.flags


def _pair_events(
    first: Sequence[ReachEvent], second: Sequence[ReachEvent]
) -> Tuple[List[Tuple[ReachEvent, ReachEvent]], List[ReachEvent], List[ReachEvent]]:
    # greedy by onset distance, same hand only
    candidates = sorted(
        (abs(a.onset_frame - b.onset_frame), i, j)
        for i, a in enumerate(first)
        for j, b in enumerate(second)
        if a.hand is b.hand
    )
    used_a, used_b, pairs = set(), set(), []
    for _, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    pairs.sort()
    return (
        [(first[i], second[j]) for i, j in pairs],
        [a for i, a in enumerate(first) if i not in used_a],
        [b for j, b in enumerate(second) if j not in used_b],
    )


def validate_annotations(
    seq: VideoSequence,
    events: Sequence[ReachEvent],
    second_pass_events: Optional[Sequence[ReachEvent]] = None,
    tolerance: int = ANNOTATOR_TOLERANCE,
) -> ValidationReport:
    """Check annotations against their detections and, optionally, a second annotator.

    Paired events whose onsets and offsets both agree within ``tolerance``
    frames are merged by the floored mean; larger disagreements are flagged
    and the first annotator's event is kept.
    """
    report = ValidationReport()
    by_index = {f.frame_index: f for f in seq.frames}
    for a, b in seq.frame_gaps():
        report.flags.append(f"{seq.video_id}: frames missing between {a} and {b}")

    def check(ev: ReachEvent, who: str):
        for f in (ev.onset_frame, ev.offset_frame):
            if not seq.first_frame <= f <= seq.last_frame:
                report.flags.append(f"{who} event {ev.onset_frame}-{ev.offset_frame}: frame {f} out of bounds")
                continue
            fd = by_index.get(f)
            if fd is None:
                report.flags.append(f"{who} event {ev.onset_frame}-{ev.offset_frame}: frame {f} has no detections")
                continue
            if fd.hand_box(ev.hand) is None:
                report.flags.append(f"{who} event {ev.onset_frame}-{ev.offset_frame}: no {ev.hand.box_label} box at frame {f}")
            if fd.object_box(ev.object_id) is None:
                report.flags.append(f"{who} event {ev.onset_frame}-{ev.offset_frame}: no box for object {ev.object_id!r} at frame {f}")

    def check_overlaps(evs: Sequence[ReachEvent], who: str):
        for hand in Hand:
            mine = sorted((e for e in evs if e.hand is hand), key=lambda e: e.onset_frame)
            for a, b in zip(mine, mine[1:]):
                if b.onset_frame <= a.offset_frame:
                    report.flags.append(
                        f"{who} events {a.onset_frame}-{a.offset_frame} and "
                        f"{b.onset_frame}-{b.offset_frame} overlap ({hand.value})"
                    )

    for ev in events:
        check(ev, "first")
    check_overlaps(events, "first")
    if second_pass_events is None:
        report.merged = list(events)
        return report

    for ev in second_pass_events:
        check(ev, "second")
    check_overlaps(second_pass_events, "second")
    pairs, only_first, only_second = _pair_events(events, second_pass_events)
    merged = []
    for a, b in pairs:
        d_on = abs(a.onset_frame - b.onset_frame)
        d_off = abs(a.offset_frame - b.offset_frame)
        if d_on > tolerance or d_off > tolerance or a.object_id != b.object_id:
            report.flags.append(
                f"annotators disagree: ({a.onset_frame},{a.offset_frame}) vs "
                f"({b.onset_frame},{b.offset_frame}) on {a.object_id!r}/{b.object_id!r}"
            )
            report.disagreements.append((a, b))
            merged.append(a)
            continue
        onset = (a.onset_frame + b.onset_frame) // 2
        offset = (a.offset_frame + b.offset_frame) // 2
        if onset >= offset:
            merged.append(a)
        else:
            merged.append(ReachEvent(a.hand, a.object_id, onset, offset, a.reach_id))
    for ev in only_first:
        report.flags.append(f"event {ev.onset_frame}-{ev.offset_frame} missing from second annotation")
        report.disagreements.append((ev, None))
        merged.append(ev)
    for ev in only_second:
        report.flags.append(f"event {ev.onset_frame}-{ev.offset_frame} missing from first annotation")
    report.merged = sorted(merged, key=lambda e: (e.onset_frame, e.hand.value))
    return report


# ---------------------------------------------------------------------------
# splitting


def split_sizes(n: int, ratios: Sequence[float]) -> Tuple[int, int, int]:
    """Train/val sizes are the ratio counts rounded half-up; test takes the rest."""
    train = int(math.floor(n * ratios[0] + 0.5))
    val = int(math.floor(n * ratios[1] + 0.5))
    val = min(val, n - train)
    return train, val, n - train - val


def split_dataset(samples: Sequence, ratios=(0.60, 0.15, 0.25), seed: int = 0):
    """Shuffle ``samples`` under ``seed`` and cut into (train, val, test)."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"split ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)}")
    n = len(samples)
    if n < 3:
        raise ValueError(f"need at least 3 samples to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train, n_val, _ = split_sizes(n, ratios)
    picked = [samples[i] for i in order]
    return picked[:n_train], picked[n_train : n_train + n_val], picked[n_train + n_val :]


# ---------------------------------------------------------------------------
# reach clips


@dataclass
class Clip:
    """One reach with its surrounding no-reach context; the unit of splitting."""

    clip_id: str
    sequence: VideoSequence
    events: List[ReachEvent]

    def labels(self, hand: Hand) -> List[FrameLabel]:
        return sequence_labels(self.sequence, self.events, hand)


def clips_from_video(seq: VideoSequence, events: Sequence[ReachEvent]) -> List[Clip]:
    """Cut a video into one clip per reach, splitting midway between reaches.

    Reaches that overlap in time (both hands at once) stay in one clip.
    """
    events = sorted(events, key=lambda e: (e.onset_frame, e.offset_frame))
    groups: List[List[ReachEvent]] = []
    for ev in events:
        if groups and ev.onset_frame <= max(e.offset_frame for e in groups[-1]):
            groups[-1].append(ev)
        else:
            groups.append([ev])
    if len(groups) <= 1:
        return [Clip(seq.video_id, seq, list(events))]
    cuts = [seq.first_frame]
    for a, b in zip(groups, groups[1:]):
        end = max(e.offset_frame for e in a)
        cuts.append((end + b[0].onset_frame + 1) // 2)
    cuts.append(seq.last_frame + 1)
    clips = []
    for k, group in enumerate(groups):
        sub = seq.slice(cuts[k], cuts[k + 1], video_id=seq.video_id)
        clips.append(Clip(f"{seq.video_id}#{k}", sub, group))
    return clips
