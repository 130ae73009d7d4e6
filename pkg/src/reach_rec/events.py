"""Two-phase keyframe tracking: onset from the distance trend, offset from IOU.

The tracker keeps a candidate onset ``t_rn`` that is held while the hand
keeps closing in on its object and moved forward once the distance has
failed to shrink for four frames in a row. An offset ``t_rf`` is declared
at the first frame whose IOU reaches the threshold while approaching.
After a touch the tracker waits for the hand to let go before re-arming.

Frame classifier scores can gate onsets and accept early offsets
(``fused``), be ignored (``rules_only``) or replace the rules entirely
(``scores_only``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .data import FrameLabel, ReachEvent, events_from_labels
from .features import FeatureStream

INCREASE_LIMIT = 4
RELEASE_FRAMES = 2
RELEASE_IOU = 0.0
CALIBRATION_GRID = tuple(k / 100 for k in range(1, 51))
CALIBRATION_TOLERANCE = 3


class Phase(str, Enum):
    IDLE = "Idle"
    APPROACHING = "Approaching"
    TOUCHED = "Touched"


class FusionMode(str, Enum):
    RULES_ONLY = "rules_only"
    SCORES_ONLY = "scores_only"
    FUSED = "fused"


OFFSET_SEMANTICS = ("touch", "literal")


@dataclass(frozen=True)
class FusionPolicy:
    mode: FusionMode = FusionMode.FUSED
    min_duration: int = 2
    score_margin: float = 0.0
    offset_semantics: str = "touch"

    def __post_init__(self):
        object.__setattr__(self, "mode", FusionMode(self.mode))
        if self.min_duration < 2:
            raise ValueError(f"min_duration must be >= 2, got {self.min_duration}")
        if not 0.0 <= self.score_margin <= 1.0:
            raise ValueError(f"score_margin must lie in [0, 1], got {self.score_margin}")
        if self.offset_semantics not in OFFSET_SEMANTICS:
            raise ValueError(f"offset_semantics must be one of {OFFSET_SEMANTICS}")


@dataclass(frozen=True)
class TrackerState:
    t_rn: Optional[int] = None
    t_rf: Optional[int] = None
    consecutive_increases: int = 0
    phase: Phase = Phase.IDLE
    last_d: Optional[float] = None
    last_frame: Optional[int] = None
    below_release: int = 0
    support_start: Optional[int] = None


def onset_step(state: TrackerState, j: int, d_j: float) -> TrackerState:
    """Distance rule for the candidate onset.

    A shrinking distance keeps ``t_rn`` and marks the hand as approaching.
    A non-shrinking one counts up; from the fourth in a row on, ``t_rn``
    follows the current frame and the tracker drops back to Idle.
    """
    if not math.isfinite(d_j):
        raise ValueError(f"distance at frame {j} is not finite")
    if state.last_frame is not None and j <= state.last_frame:
        raise ValueError(f"frame {j} fed after frame {state.last_frame}")
    if state.last_d is None:
        return replace(state, t_rn=j, last_d=d_j, last_frame=j)
    if state.phase is Phase.TOUCHED:
        return replace(state, last_d=d_j, last_frame=j)
    if d_j - state.last_d < 0:
        return replace(state, consecutive_increases=0, phase=Phase.APPROACHING, last_d=d_j, last_frame=j)
    count = min(state.consecutive_increases + 1, INCREASE_LIMIT)
    if count == INCREASE_LIMIT:
        return replace(state, t_rn=j, consecutive_increases=count, phase=Phase.IDLE,
                       last_d=d_j, last_frame=j)
    return replace(state, consecutive_increases=count, last_d=d_j, last_frame=j)


def offset_step(state: TrackerState, j: int, iou_j: float, theta: float,
                min_duration: int = 2, offset_semantics: str = "touch",
                early: bool = False) -> Tuple[TrackerState, Optional[Tuple[int, int]]]:
    """IOU rule for the offset; returns the new state and an event if one closed.

    ``early`` lets a classifier vote accept the offset below the threshold.
    """
    if state.phase is Phase.APPROACHING:
        if iou_j >= theta or early:
            t_rf = j if offset_semantics == "touch" else j - 1
            if state.t_rn is not None and t_rf - state.t_rn >= min_duration:
                new = replace(state, t_rf=t_rf, phase=Phase.TOUCHED, below_release=0)
                return new, (state.t_rn, t_rf)
        return state, None
    if state.phase is Phase.TOUCHED:
        if iou_j <= RELEASE_IOU:
            below = state.below_release + 1
            if below >= RELEASE_FRAMES:
                return replace(state, t_rn=j, t_rf=None, phase=Phase.IDLE, consecutive_increases=0,
                               below_release=0), None
            return replace(state, below_release=below), None
        return replace(state, below_release=0), None
    return state, None


def _vote(scores, margin: float) -> Tuple[int, bool]:
    """Argmax class and whether it beats the runner-up by ``margin``."""
    p = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-p, kind="stable")
    top = int(order[0])
    return top, bool(p[top] - p[order[1]] >= margin)


class ReachTracker:
    """Online event assembly for one hand stream, one frame at a time."""

    def __init__(self, theta: float, policy: Optional[FusionPolicy] = None):
        if not 0.0 < theta < 1.0:
            raise ValueError(f"IOU threshold must lie in (0, 1), got {theta}")
        self.theta = theta
        self.policy = policy or FusionPolicy()
        self.state = TrackerState()
        self._pending: Optional[int] = None  # scores_only: open RN
        self._last_frame: Optional[int] = None

    def update(self, j: int, d_j: float, iou_j: float, scores=None) -> Optional[Tuple[int, int]]:
        """Feed frame ``j``; returns ``(onset, offset)`` when an event closes here."""
        mode = self.policy.mode
        if mode is not FusionMode.RULES_ONLY and scores is None:
            raise ValueError(f"{mode.value} mode needs class scores for every frame")
        if mode is FusionMode.SCORES_ONLY:
            return self._update_scores(j, scores)
        st = self.state
        supported = early = False
        if mode is FusionMode.FUSED:
            top, clear = _vote(scores, self.policy.score_margin)
            supported = clear and top in (FrameLabel.RN, FrameLabel.R)
            early = clear and top == FrameLabel.RF
            support_start = (st.support_start if st.support_start is not None else j) if supported else None
        was_idle = st.phase is Phase.IDLE
        st = onset_step(st, j, d_j)
        if mode is FusionMode.FUSED:
            st = replace(st, support_start=support_start)
            if was_idle and st.phase is Phase.APPROACHING:
                if supported:
                    st = replace(st, t_rn=support_start)
                else:
                    st = replace(st, phase=Phase.IDLE)
        st, event = offset_step(st, j, iou_j, self.theta, self.policy.min_duration,
                                self.policy.offset_semantics, early=early)
        self.state = st
        return event

    def _update_scores(self, j: int, scores) -> Optional[Tuple[int, int]]:
        if self._last_frame is not None and j <= self._last_frame:
            raise ValueError(f"frame {j} fed after frame {self._last_frame}")
        self._last_frame = j
        label = int(np.argmax(np.asarray(scores, dtype=np.float64)))
        # mirrors events_from_labels on the argmax sequence
        if label == FrameLabel.RN:
            self._pending = j
        elif label == FrameLabel.RF:
            onset, self._pending = self._pending, None
            if onset is not None and j - onset >= self.policy.min_duration:
                return onset, j
        elif label == FrameLabel.NoR:
            self._pending = None
        return None


class EventTrace(NamedTuple):
    event: ReachEvent
    scores: List[List[float]]


def _event(stream: FeatureStream, onset: int, offset: int, pos: dict, reach_id: str) -> ReachEvent:
    target = stream.targets[pos[offset]] if stream.targets else None
    return ReachEvent(stream.hand, target or stream.object_id or "", onset, offset, reach_id)


def assemble_events(scores, stream: FeatureStream, theta: float,
                    policy: Optional[FusionPolicy] = None) -> List[ReachEvent]:
    """Run the tracker over the valid frames of ``stream``.

    ``scores`` is an (n, 4) array of class probabilities aligned with the
    stream, or None for ``rules_only``.
    """
    policy = policy or FusionPolicy()
    n = len(stream)
    if scores is not None:
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape[0] != n:
            raise ValueError(f"{scores.shape[0]} score rows for a stream of {n} frames")
    tracker = ReachTracker(theta, policy)
    pos = {f: i for i, f in enumerate(stream.frame_indices)}
    found = []
    for i in range(n):
        if not stream.valid[i]:
            continue
        vec = stream.vectors[i]
        hit = tracker.update(stream.frame_indices[i], vec.d_norm, vec.iou,
                             None if scores is None else scores[i])
        if hit is not None:
            found.append(hit)
    return [_event(stream, on, off, pos, str(k)) for k, (on, off) in enumerate(found)]


def assemble_events_from_labels(labels: Sequence[int], stream: FeatureStream,
                                min_duration: int = 2) -> List[ReachEvent]:
    """Decode an argmax label sequence directly (valid frames only)."""
    idx = [i for i in range(len(stream)) if stream.valid[i]]
    pairs = events_from_labels([labels[i] for i in idx], warn=False)
    pos = {f: i for i, f in enumerate(stream.frame_indices)}
    out = []
    for on, off in pairs:
        a, b = stream.frame_indices[idx[on]], stream.frame_indices[idx[off]]
        if b - a >= min_duration:
            out.append(_event(stream, a, b, pos, str(len(out))))
    return out


def event_traces(events: Sequence[ReachEvent], stream: FeatureStream, scores) -> List[EventTrace]:
    """Per-event class-score traces from onset to offset, for debugging output."""
    if scores is None:
        return [EventTrace(ev, []) for ev in events]
    pos = {f: i for i, f in enumerate(stream.frame_indices)}
    scores = np.asarray(scores, dtype=np.float64)
    return [EventTrace(ev, scores[pos[ev.onset_frame] : pos[ev.offset_frame] + 1].round(6).tolist())
            for ev in events]


# ---------------------------------------------------------------------------
# threshold calibration


@dataclass
class CalibrationItem:
    """One validation hand stream: features, class scores and true (onset, offset) pairs."""

    stream: FeatureStream
    scores: Optional[np.ndarray]
    truth: List[Tuple[int, int]]


def match_count(pred: Sequence[Tuple[int, int]], truth: Sequence[Tuple[int, int]],
                tolerance: int = CALIBRATION_TOLERANCE) -> int:
    """Size of a maximum one-to-one matching where both keyframes lie within ``tolerance``."""
    options = [[k for k, (p_on, p_off) in enumerate(pred)
                if abs(p_on - t_on) <= tolerance and abs(p_off - t_off) <= tolerance]
               for t_on, t_off in truth]
    owner: dict = {}

    def augment(t, seen):
        for k in options[t]:
            if k in seen:
                continue
            seen.add(k)
            if k not in owner or augment(owner[k], seen):
                owner[k] = t
                return True
        return False

    return sum(augment(t, set()) for t in range(len(truth)))


def event_f1(n_match: int, n_pred: int, n_truth: int) -> float:
    denom = n_pred + n_truth
    return 1.0 if denom == 0 else 2.0 * n_match / denom


def threshold_sweep(items: Sequence[CalibrationItem], policy: Optional[FusionPolicy] = None,
                    grid: Sequence[float] = CALIBRATION_GRID,
                    tolerance: int = CALIBRATION_TOLERANCE) -> List[Tuple[float, float]]:
    """Event F1 at every threshold of ``grid``."""
    policy = policy or FusionPolicy()
    out = []
    for theta in grid:
        n_match = n_pred = n_truth = 0
        for item in items:
            pred = [(e.onset_frame, e.offset_frame)
                    for e in assemble_events(item.scores, item.stream, theta, policy)]
            n_match += match_count(pred, item.truth, tolerance)
            n_pred += len(pred)
            n_truth += len(item.truth)
        out.append((theta, event_f1(n_match, n_pred, n_truth)))
    return out


def calibrate_threshold(items: Sequence[CalibrationItem], policy: Optional[FusionPolicy] = None,
                        grid: Sequence[float] = CALIBRATION_GRID,
                        tolerance: int = CALIBRATION_TOLERANCE) -> float:
    """Grid threshold with the best event F1; ties go to the smallest threshold."""
    if not any(item.truth for item in items):
        raise ValueError("cannot calibrate the IOU threshold on a validation set without events")
    sweep = threshold_sweep(items, policy, sorted(grid), tolerance)
    best_theta, best_f1 = sweep[0]
    for theta, f1 in sweep[1:]:
        if f1 > best_f1:
            best_theta, best_f1 = theta, f1
    return best_theta
