"""Frame- and event-level evaluation: confusion, precision/recall, keyframe delays."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .data import Clip, FrameLabel, Hand, ReachEvent
from .events import FusionPolicy, assemble_events, assemble_events_from_labels
from .features import FeatureStream, feature_stream
from .nn.models import ModelParams
from .nn.train import predict

N_CLASSES = len(FrameLabel)
BINARY_NAMES = ("NoR", "Reach")
DELAY_WINDOW = 10
ONSET_TOLERANCE = 2
OFFSET_TOLERANCE = 1


@dataclass
class ConfusionMatrix:
    """Counts indexed (truth, predicted) over NoR, RN, R, RF."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def binary(self) -> np.ndarray:
        """2x2 counts over (NoR, Reach) with RN, R and RF folded into Reach."""
        c = self.counts
        return np.array([[c[0, 0], c[0, 1:].sum()], [c[1:, 0].sum(), c[1:, 1:].sum()]], dtype=np.int64)

    @property
    def accuracy(self) -> Optional[float]:
        return None if self.total == 0 else float(np.trace(self.counts)) / self.total

    @property
    def binary_accuracy(self) -> Optional[float]:
        return None if self.total == 0 else float(np.trace(self.binary)) / self.total

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def confusion(pred: Sequence[int], truth: Sequence[int]) -> ConfusionMatrix:
    if len(pred) != len(truth):
        raise ValueError(f"{len(pred)} predictions for {len(truth)} truth labels")
    m = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    if len(pred):
        np.add.at(m, (np.asarray(truth, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return ConfusionMatrix(m)


def _ratio(num, den) -> Optional[float]:
    return None if den == 0 else float(num) / float(den)


def precision_recall(m: ConfusionMatrix, binary: bool = True) -> Dict[str, Tuple[Optional[float], Optional[float]]]:
    """(precision, recall) per class; None where the denominator is empty."""
    counts = m.binary if binary else m.counts
    names = BINARY_NAMES if binary else tuple(label.name for label in FrameLabel)
    out = {}
    for k, name in enumerate(names):
        tp = counts[k, k]
        out[name] = (_ratio(tp, counts[:, k].sum()), _ratio(tp, counts[k, :].sum()))
    return out


@dataclass
class DelayResult:
    pairs: List[Tuple[ReachEvent, ReachEvent]]
    onset_delays: List[int]
    offset_delays: List[int]
    missed: int
    spurious: int

    @property
    def matched(self) -> int:
        return len(self.pairs)


def keyframe_delay(pred: Sequence[ReachEvent], truth: Sequence[ReachEvent],
                   window: int = DELAY_WINDOW) -> DelayResult:
    """Greedy one-to-one matching by nearest onset (same hand, within ``window``).

    Delays are predicted minus truth, so positive means late.
    """
    candidates = []
    for ti, t in enumerate(truth):
        for pi, p in enumerate(pred):
            gap = abs(p.onset_frame - t.onset_frame)
            if p.hand is t.hand and gap <= window:
                candidates.append((gap, ti, pi))
    candidates.sort()
    used_t, used_p, pairs = set(), set(), []
    for _, ti, pi in candidates:
        if ti in used_t or pi in used_p:
            continue
        used_t.add(ti)
        used_p.add(pi)
        pairs.append((ti, pi))
    pairs.sort()
    matched = [(truth[ti], pred[pi]) for ti, pi in pairs]
    return DelayResult(
        pairs=matched,
        onset_delays=[p.onset_frame - t.onset_frame for t, p in matched],
        offset_delays=[p.offset_frame - t.offset_frame for t, p in matched],
        missed=len(truth) - len(matched),
        spurious=len(pred) - len(matched),
    )


@dataclass
class EvalReport:
    n_frames: int
    frame_accuracy: Optional[float]
    binary_accuracy: Optional[float]
    precision: Dict[str, Optional[float]]
    recall: Dict[str, Optional[float]]
    confusion: List[List[int]]
    binary_confusion: List[List[int]]
    n_truth_events: int
    matched: int
    missed: int
    spurious: int
    onset_delays: List[int]
    offset_delays: List[int]
    within_tolerance: Optional[float]
    mean_onset_delay: Optional[float]
    mean_offset_delay: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


@dataclass
class StreamOutcome:
    """Per-stream inputs to the report: frame labels and events, predicted and true."""

    pred_labels: Sequence[int]
    truth_labels: Sequence[int]
    pred_events: Sequence[ReachEvent]
    truth_events: Sequence[ReachEvent]


def build_report(outcomes: Sequence[StreamOutcome], window: int = DELAY_WINDOW) -> EvalReport:
    cm = ConfusionMatrix()
    onset, offset = [], []
    n_truth = matched = missed = spurious = good = 0
    for o in outcomes:
        cm = cm + confusion(o.pred_labels, o.truth_labels)
        res = keyframe_delay(o.pred_events, o.truth_events, window)
        onset += res.onset_delays
        offset += res.offset_delays
        n_truth += len(o.truth_events)
        matched += res.matched
        missed += res.missed
        spurious += res.spurious
        good += sum(abs(a) <= ONSET_TOLERANCE and abs(b) <= OFFSET_TOLERANCE
                    for a, b in zip(res.onset_delays, res.offset_delays))
    pr = precision_recall(cm)
    return EvalReport(
        n_frames=cm.total,
        frame_accuracy=cm.accuracy,
        binary_accuracy=cm.binary_accuracy,
        precision={k: v[0] for k, v in pr.items()},
        recall={k: v[1] for k, v in pr.items()},
        confusion=cm.counts.tolist(),
        binary_confusion=cm.binary.tolist(),
        n_truth_events=n_truth,
        matched=matched,
        missed=missed,
        spurious=spurious,
        onset_delays=onset,
        offset_delays=offset,
        within_tolerance=_ratio(good, n_truth),
        mean_onset_delay=float(np.mean(onset)) if onset else None,
        mean_offset_delay=float(np.mean(offset)) if offset else None,
    )


ScoreFn = Callable[[FeatureStream], np.ndarray]


def stream_outcome(scores: np.ndarray, stream: FeatureStream, truth_labels: Sequence[int],
                   truth_events: Sequence[ReachEvent], theta: float,
                   policy: FusionPolicy) -> StreamOutcome:
    mask = np.asarray(stream.valid, dtype=bool)
    pred = np.argmax(scores, axis=1) if len(stream) else np.zeros(0, dtype=np.int64)
    if policy.mode.value == "scores_only":
        events = assemble_events_from_labels(pred, stream, policy.min_duration)
    else:
        events = assemble_events(scores, stream, theta, policy)
    return StreamOutcome(
        pred_labels=pred[mask].tolist(),
        truth_labels=np.asarray(truth_labels, dtype=np.int64)[mask].tolist(),
        pred_events=events,
        truth_events=[e for e in truth_events if e.hand is stream.hand],
    )


def evaluate(model: Union[ModelParams, ScoreFn], theta: float, clips: Sequence[Clip],
             policy: Optional[FusionPolicy] = None, pairing: str = "sticky") -> EvalReport:
    """Predict, assemble events and score every hand stream of ``clips``."""
    if not clips:
        raise ValueError("nothing to evaluate")
    policy = policy or FusionPolicy()
    score = (lambda s: predict(model, s)) if isinstance(model, ModelParams) else model
    outcomes = []
    for clip in clips:
        for hand in Hand:
            stream = feature_stream(clip.sequence, hand, pairing)
            outcomes.append(stream_outcome(score(stream), stream, clip.labels(hand),
                                           clip.events, theta, policy))
    return build_report(outcomes)


def _fmt(v: Optional[float], pct: bool = False) -> str:
    if v is None:
        return "n/a"
    return f"{100 * v:.2f}" if pct else f"{v:.2f}"


def format_table(rows: Sequence[Tuple[str, int, EvalReport]]) -> str:
    """Plain-text summary: one row per model with accuracy, NoR/R scores and delays."""
    head = ("Model", "Params", "Avg. acc [%]", "Prec NoR/R", "Rec NoR/R", "Onset delay", "Events ok")
    lines = [head]
    for name, n_params, r in rows:
        lines.append((
            name,
            str(n_params),
            _fmt(r.frame_accuracy, pct=True),
            f"{_fmt(r.precision['NoR'])}/{_fmt(r.precision['Reach'])}",
            f"{_fmt(r.recall['NoR'])}/{_fmt(r.recall['Reach'])}",
            _fmt(r.mean_onset_delay),
            f"{r.matched}/{r.n_truth_events}",
        ))
    widths = [max(len(row[k]) for row in lines) for k in range(len(head))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in lines)
