"""Synthetic reach clips with exact ground truth.

Each clip shows an infant box, two hands and one or more objects. A reaching
hand idles, optionally makes an aborted half-approach, then approaches its
nearest object along a smoothstep profile until the boxes first overlap
(the offset frame), and retraces its path back to rest. The other hand
idles and occasionally fidgets. Everything is driven by one seed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import FrameDetections, FrameLabel, Hand, ReachEvent, VideoSequence, labels_from_events
from .geometry import BoundingBox, iou

IntRange = Tuple[int, int]
FloatRange = Tuple[float, float]

MAX_PLACEMENT_TRIES = 500
MAX_SCENE_TRIES = 10
MAX_JITTER_TRIES = 20
LINEAR_MIX = 0.5


class SynthConfigError(ValueError):
    pass


def lognormal_duration_weights(median: float = 10.0, sigma: float = 0.5,
                               support: IntRange = (2, 40)) -> Tuple[Tuple[int, float], ...]:
    """Log-normal mass integrated over unit bins [d - 0.5, d + 0.5], renormalized."""
    mu = math.log(median)

    def cdf(x):
        if x <= 0:
            return 0.0
        return 0.5 * (1.0 + math.erf((math.log(x) - mu) / (sigma * math.sqrt(2.0))))

    lo, hi = support
    mass = [cdf(d + 0.5) - cdf(d - 0.5) for d in range(lo, hi + 1)]
    total = sum(mass)
    return tuple((d, m / total) for d, m in zip(range(lo, hi + 1), mass))


@dataclass(frozen=True)
class SynthConfig:
    frame_size: Tuple[float, float] = (640.0, 480.0)
    n_pre_frames: IntRange = (8, 20)
    n_post_frames: IntRange = (6, 16)
    duration_weights: Tuple[Tuple[int, float], ...] = field(default_factory=lognormal_duration_weights)
    hand_box_size: FloatRange = (32.0, 48.0)
    object_box_size: FloatRange = (40.0, 64.0)
    reach_distance: FloatRange = (120.0, 300.0)
    jitter_std: float = 1.0
    abort_probability: float = 0.15
    n_objects: IntRange = (1, 2)
    n_reaches: IntRange = (1, 1)
    fidget_probability: float = 0.3
    touch_iou: float = 0.05
    pre_touch_iou: float = 0.0
    abort_graze_iou: float = 0.0
    coord_decimals: Optional[int] = 2
    seed: int = 0

    def __post_init__(self):
        for name in ("n_pre_frames", "n_post_frames", "hand_box_size", "object_box_size",
                     "reach_distance", "n_objects", "n_reaches"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise SynthConfigError(f"{name} range is empty: {lo} > {hi}")
            if lo < 0:
                raise SynthConfigError(f"{name} must be non-negative")
        if self.n_objects[0] < 1 or self.n_reaches[0] < 1:
            raise SynthConfigError("need at least one object and one reach per clip")
        for name in ("abort_probability", "fidget_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise SynthConfigError(f"{name} must lie in [0, 1], got {p}")
        if not 0.0 < self.touch_iou < 1.0:
            raise SynthConfigError(f"touch_iou must lie in (0, 1), got {self.touch_iou}")
        if not 0.0 <= self.pre_touch_iou < self.touch_iou:
            raise SynthConfigError("pre_touch_iou must lie in [0, touch_iou)")
        if not 0.0 <= self.abort_graze_iou < self.touch_iou:
            raise SynthConfigError("abort_graze_iou must lie in [0, touch_iou)")
        if self.jitter_std < 0:
            raise SynthConfigError("jitter_std must be non-negative")
        if not self.duration_weights:
            raise SynthConfigError("duration distribution is empty")
        if any(d < 2 for d, _ in self.duration_weights):
            raise SynthConfigError("reach durations must be at least 2 frames")
        if any(w < 0 for _, w in self.duration_weights) or sum(w for _, w in self.duration_weights) <= 0:
            raise SynthConfigError("duration weights must be non-negative with positive sum")
        fw, fh = self.frame_size
        if fw <= 0 or fh <= 0:
            raise SynthConfigError("frame size must be positive")
        if self.hand_box_size[1] + self.object_box_size[1] > min(fw, fh):
            raise SynthConfigError(
                f"hand ({self.hand_box_size[1]}) and object ({self.object_box_size[1]}) boxes "
                f"cannot be placed side by side inside a {fw:g}x{fh:g} frame"
            )
        if self.hand_box_size[0] <= 0 or self.object_box_size[0] <= 0:
            raise SynthConfigError("box sizes must be positive")

    @classmethod
    def fixed_duration(cls, duration: int, **kwargs) -> "SynthConfig":
        return cls(duration_weights=((duration, 1.0),), **kwargs)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["duration_weights"] = [[d, w] for d, w in self.duration_weights]
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthConfig":
        kw = dict(raw)
        if "duration_weights" in kw:
            kw["duration_weights"] = tuple((int(d), float(w)) for d, w in kw["duration_weights"])
        for key, value in list(kw.items()):
            if isinstance(value, list):
                kw[key] = tuple(value)
        return cls(**kw)


@dataclass
class SynthSample:
    sequence: VideoSequence
    truth_events: List[ReachEvent]
    truth_labels: Dict[Hand, List[FrameLabel]]


def smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _round_box(cx, cy, w, h, decimals: Optional[int] = 2) -> BoundingBox:
    vals = [float(cx - w / 2.0), float(cy - h / 2.0), float(w), float(h)]
    if decimals is not None:
        vals = [round(v, decimals) for v in vals]
    return BoundingBox(*vals)


@dataclass
class _Reach:
    hand: Hand
    object_id: str
    duration: int
    aborted: bool


class _Scene:
    """Static layout: hand rests, box sizes and object positions."""

    def __init__(self, cfg: SynthConfig, rng: np.random.Generator, reach_hands: Sequence[Hand]):
        self.cfg = cfg
        fw, fh = cfg.frame_size
        self.infant_center = (fw * rng.uniform(0.4, 0.6), fh * rng.uniform(0.55, 0.65))
        self.infant_size = (fw * rng.uniform(0.3, 0.4), fh * rng.uniform(0.5, 0.6))
        side = fw * rng.uniform(0.09, 0.15)
        ry = fh * rng.uniform(0.72, 0.84)
        self.rest = {
            Hand.LEFT: np.array([self.infant_center[0] - side, ry + rng.uniform(-8, 8)]),
            Hand.RIGHT: np.array([self.infant_center[0] + side, ry + rng.uniform(-8, 8)]),
        }
        self.hand_size = {h: rng.uniform(*cfg.hand_box_size) for h in Hand}
        self.objects: Dict[str, Tuple[np.ndarray, float]] = {}
        self.targets: Dict[Hand, str] = {}

        n_obj = int(rng.integers(cfg.n_objects[0], cfg.n_objects[1] + 1))
        reaching = sorted(set(reach_hands), key=lambda h: h.value)
        if len(reaching) > n_obj:
            n_obj = len(reaching)
        names = [f"obj{k}" for k in range(n_obj)]
        for hand, name in zip(reaching, names):
            self._place_target(rng, hand, name)
        for name in names[len(reaching):]:
            self._place_distractor(rng, name)

    def hand_box(self, hand: Hand, c) -> BoundingBox:
        s = self.hand_size[hand]
        return BoundingBox(c[0] - s / 2.0, c[1] - s / 2.0, s, s)

    def object_box(self, name: str, c=None) -> BoundingBox:
        center, s = self.objects[name]
        c = center if c is None else c
        return BoundingBox(c[0] - s / 2.0, c[1] - s / 2.0, s, s)

    def _inside(self, c, half) -> bool:
        fw, fh = self.cfg.frame_size
        return half + 2 <= c[0] <= fw - half - 2 and half + 2 <= c[1] <= fh - half - 2

    def _clear_of_hands(self, box: BoundingBox, margin: float) -> bool:
        grown = BoundingBox(box.x - margin, box.y - margin, box.w + 2 * margin, box.h + 2 * margin)
        return all(iou(self.hand_box(h, self.rest[h]), grown) == 0.0 for h in Hand)

    def _place_target(self, rng, hand: Hand, name: str):
        for _ in range(MAX_PLACEMENT_TRIES):
            size = rng.uniform(*self.cfg.object_box_size)
            dist = rng.uniform(*self.cfg.reach_distance)
            angle = rng.uniform(-math.pi * 0.85, -math.pi * 0.15)
            c = self.rest[hand] + dist * np.array([math.cos(angle), math.sin(angle)])
            if not self._inside(c, size / 2.0):
                continue
            self.objects[name] = (c, size)
            box = self.object_box(name)
            others = [o for o in self.objects if o != name]
            if not self._clear_of_hands(box, 30.0) or any(
                iou(self.object_box(o), box) > 0 or self._too_close(o, name) for o in others
            ):
                del self.objects[name]
                continue
            if any(self._path_hits(h, self.targets[h], name) for h in self.targets) or any(
                self._path_hits(hand, name, o) for o in others
            ):
                del self.objects[name]
                continue
            self.targets[hand] = name
            return
        raise SynthConfigError(f"could not place a reachable object for the {hand.name.lower()} hand")

    def _too_close(self, a: str, b: str) -> bool:
        (ca, sa), (cb, sb) = self.objects[a], self.objects[b]
        return float(np.linalg.norm(ca - cb)) < (sa + sb) / 2.0 * 1.5

    def _path_hits(self, hand: Hand, target: str, other: str) -> bool:
        """True if the hand's straight path to ``target`` comes near ``other``."""
        start, end = self.rest[hand], self.objects[target][0]
        box = self.object_box(other)
        grown = BoundingBox(box.x - 6, box.y - 6, box.w + 12, box.h + 12)
        for u in np.linspace(0.0, 1.0, 41):
            if iou(self.hand_box(hand, start + u * (end - start)), grown) > 0:
                return True
        return False

    def _place_distractor(self, rng, name: str):
        fw, fh = self.cfg.frame_size
        for _ in range(MAX_PLACEMENT_TRIES):
            size = rng.uniform(*self.cfg.object_box_size)
            c = np.array([rng.uniform(0, fw), rng.uniform(0, fh * 0.8)])
            if not self._inside(c, size / 2.0):
                continue
            self.objects[name] = (c, size)
            ok = self._clear_of_hands(self.object_box(name), 30.0)
            ok = ok and not any(
                iou(self.object_box(o), self.object_box(name)) > 0 or self._too_close(o, name)
                for o in self.objects if o != name
            )
            for hand, target in self.targets.items():
                d_target = np.linalg.norm(self.objects[target][0] - self.rest[hand])
                d_other = np.linalg.norm(c - self.rest[hand])
                if d_other < 1.25 * d_target or self._path_hits(hand, target, name):
                    ok = False
            if ok:
                return
            del self.objects[name]
        raise SynthConfigError("could not place distractor objects clear of the reach paths")


class _Track:
    """Noise-free hand centre per frame plus per-frame constraints for jitter."""

    def __init__(self, rest: np.ndarray):
        self.rest = rest
        self.centers: List[np.ndarray] = []

    def idle(self, n: int):
        self.centers.extend(self.rest.copy() for _ in range(n))

    def extend(self, points):
        self.centers.extend(np.asarray(p, dtype=np.float64) for p in points)

    def pad_to(self, n: int):
        self.idle(n - len(self.centers))


def _level_fraction(scene: _Scene, hand: Hand, target: str, level: float) -> float:
    """Smallest fraction u of the rest->object-centre line with IOU above ``level``.

    IOU is non-decreasing along that line, so bisection applies. The result
    lies on the overlapping side: IOU there is > level (>= 0 for level 0).
    """
    start, end = scene.rest[hand], scene.objects[target][0]
    obox = scene.object_box(target)

    def overlap(u):
        return iou(scene.hand_box(hand, start + u * (end - start)), obox)

    if overlap(1.0) <= level:
        raise SynthConfigError("hand box too small relative to the object to ever reach touch level")
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if overlap(mid) <= level:
            lo = mid
        else:
            hi = mid
    return hi


def approach_profile(t):
    """Progress in [0, 1] at normalized time ``t``: smoothstep blended with constant speed."""
    return (1.0 - LINEAR_MIX) * smoothstep(t) + LINEAR_MIX * np.clip(t, 0.0, 1.0)


def _approach_fractions(rng, duration: int, u_pre: float, u_touch: float) -> List[float]:
    """Path fractions for frames onset..offset.

    Frames up to offset-1 follow the profile up to ``u_pre`` (no contact);
    the offset frame lands at ``u_touch``.
    """
    tau_end = rng.uniform(0.65, 0.8)
    scale = u_pre / float(approach_profile(tau_end))
    pre = [scale * float(approach_profile(tau_end * (k + 1) / duration)) for k in range(duration)]
    return pre + [u_touch]


def _withdraw_fractions(rng, duration: int, u_pre: float) -> List[float]:
    """Retrace from just before contact back to rest, a little faster than the approach."""
    tau_end = rng.uniform(0.65, 0.8)
    scale = u_pre / float(approach_profile(tau_end))
    n_back = int(rng.integers(max(2, math.ceil((duration + 1) / 2)), duration + 2))
    return [scale * float(approach_profile(tau_end * (1.0 - j / n_back))) for j in range(1, n_back + 1)]


def generate_sequence(cfg: SynthConfig, seed: int, video_id: Optional[str] = None) -> SynthSample:
    """One synthetic clip with its ground-truth reaches and per-hand labels."""
    rng = np.random.default_rng(seed)
    video_id = video_id or f"synth-{seed}"

    n_reaches = int(rng.integers(cfg.n_reaches[0], cfg.n_reaches[1] + 1))
    durations = np.array([d for d, _ in cfg.duration_weights])
    dweights = np.array([w for _, w in cfg.duration_weights], dtype=np.float64)
    dweights /= dweights.sum()
    reaches = []
    for _ in range(n_reaches):
        hand = Hand.LEFT if rng.random() < 0.5 else Hand.RIGHT
        duration = int(rng.choice(durations, p=dweights))
        aborted = bool(rng.random() < cfg.abort_probability)
        reaches.append(_Reach(hand, "", duration, aborted))
    for attempt in range(MAX_SCENE_TRIES):
        try:
            scene = _Scene(cfg, rng, [r.hand for r in reaches])
            break
        except SynthConfigError:
            # a crowded layout can dead-end; start over with fresh positions
            if attempt == MAX_SCENE_TRIES - 1:
                raise
    for r in reaches:
        r.object_id = scene.targets[r.hand]

    tracks = {h: _Track(scene.rest[h]) for h in Hand}
    offsets = set()
    busy: List[Tuple[Hand, int, int]] = []
    events: List[ReachEvent] = []

    def idle_all(n):
        for tr in tracks.values():
            tr.idle(n)

    idle_all(int(rng.integers(cfg.n_pre_frames[0], cfg.n_pre_frames[1] + 1)))
    for k, reach in enumerate(reaches):
        hand, target = reach.hand, reach.object_id
        other = Hand.RIGHT if hand is Hand.LEFT else Hand.LEFT
        start = scene.rest[hand]
        path = scene.objects[target][0] - start
        u_contact = _level_fraction(scene, hand, target, 0.0)
        u_touch = _level_fraction(scene, hand, target, cfg.touch_iou)
        if cfg.pre_touch_iou > 0:
            u_pre = _level_fraction(scene, hand, target, cfg.pre_touch_iou * rng.uniform(0.5, 0.99))
        else:
            u_pre = u_contact - rng.uniform(1.0, 4.0) / float(np.linalg.norm(path))
        u_touch += rng.uniform(0.02, 0.25) * (1.0 - u_touch)
        first = len(tracks[hand].centers)

        if reach.aborted:
            if cfg.abort_graze_iou > 0:
                u_max = _level_fraction(scene, hand, target, cfg.abort_graze_iou)
            else:
                u_max = u_contact * rng.uniform(0.35, 0.6)
            n_in = int(rng.integers(3, 8))
            n_out = int(rng.integers(4, 7))
            ups = [u_max * float(smoothstep(j / n_in)) for j in range(1, n_in + 1)]
            downs = [u_max * (1.0 - j / n_out) for j in range(1, n_out + 1)]
            tracks[hand].extend(start + u * path for u in ups + downs)
            tracks[hand].idle(int(rng.integers(4, 9)))
            tracks[other].pad_to(len(tracks[hand].centers))

        d = reach.duration
        onset = len(tracks[hand].centers)
        tracks[hand].extend(start + u * path for u in _approach_fractions(rng, d, u_pre, u_touch))
        tracks[hand].extend(start + u * path for u in _withdraw_fractions(rng, d, u_pre))
        offset = onset + d
        tracks[other].pad_to(len(tracks[hand].centers))
        offsets.add((offset, hand, target))
        busy.append((hand, first, len(tracks[hand].centers)))
        events.append(ReachEvent(hand, target, onset, offset, reach_id=str(k)))
        idle_all(int(rng.integers(cfg.n_post_frames[0], cfg.n_post_frames[1] + 1)))

    n_frames = len(tracks[Hand.LEFT].centers)
    _add_fidgets(cfg, rng, scene, tracks, busy, n_frames)

    frames = _render(cfg, rng, scene, tracks, offsets, n_frames)
    seq = VideoSequence(video_id, frames)
    labels = {h: labels_from_events(events, n_frames, h) for h in Hand}
    return SynthSample(seq, events, labels)


def _add_fidgets(cfg, rng, scene: _Scene, tracks, busy, n_frames):
    """Small out-and-back movements of a hand while it is not reaching."""
    length = 8
    for hand in Hand:
        if rng.random() >= cfg.fidget_probability:
            continue
        spans = [(a - 6, b + 6) for h, a, b in busy if h is hand]
        free = [f for f in range(1, n_frames - length)
                if all(f + length < a or f > b for a, b in spans)]
        if not free:
            continue
        f0 = int(rng.choice(free))
        angle = rng.uniform(0, 2 * math.pi)
        amp = rng.uniform(10.0, 25.0)
        shift = amp * np.array([math.cos(angle), math.sin(angle)])
        offsets = [float(smoothstep(j / 4)) for j in range(1, 5)] + [1.0 - j / 4 for j in range(1, 5)]
        pts = [tracks[hand].centers[f0 + j] + a * shift for j, a in enumerate(offsets)]
        boxes = [scene.hand_box(hand, p) for p in pts]
        if any(iou(b, scene.object_box(o)) > 0 for b in boxes for o in scene.objects):
            continue
        for j, p in enumerate(pts):
            tracks[hand].centers[f0 + j] = p


def _render(cfg: SynthConfig, rng, scene: _Scene, tracks, offsets, n_frames) -> List[FrameDetections]:
    sigma = cfg.jitter_std
    names = sorted(scene.objects)
    frames = []
    for f in range(n_frames):
        icx, icy = scene.infant_center
        iw, ih = scene.infant_size
        infant = _round_box(icx + rng.normal(0, sigma), icy + rng.normal(0, sigma), iw, ih, cfg.coord_decimals)
        exact_hands = {h: scene.hand_box(h, tracks[h].centers[f]) for h in Hand}
        exact_objects = {o: scene.object_box(o) for o in names}
        # requirement per (hand, object): "touch", "zero" or "below"
        need = {}
        for h in Hand:
            for o in names:
                if (f, h, o) in offsets:
                    need[h, o] = "touch"
                else:
                    need[h, o] = "zero" if iou(exact_hands[h], exact_objects[o]) == 0.0 else "below"

        def draw(s_hand, s_obj):
            objs = {}
            for o in names:
                c, size = scene.objects[o]
                objs[o] = _round_box(c[0] + rng.normal(0, s_obj), c[1] + rng.normal(0, s_obj),
                                     size, size, cfg.coord_decimals)
            hands = {}
            for h in Hand:
                c, size = tracks[h].centers[f], scene.hand_size[h]
                hands[h] = _round_box(c[0] + rng.normal(0, s_hand), c[1] + rng.normal(0, s_hand),
                                      size, size, cfg.coord_decimals)
            return hands, objs

        for _ in range(MAX_JITTER_TRIES if sigma > 0 else 0):
            hands, objs = draw(sigma, sigma / 2)
            if _consistent(hands, objs, need, cfg.touch_iou):
                break
        else:
            hands, objs = draw(0.0, 0.0)
            if not _consistent(hands, objs, need, cfg.touch_iou):
                raise SynthConfigError(f"could not keep frame {f} consistent with its labels")
        frames.append(FrameDetections(
            frame_index=f,
            frame_size=tuple(cfg.frame_size),
            infant=infant,
            left_hand=hands[Hand.LEFT],
            right_hand=hands[Hand.RIGHT],
            objects=tuple((o, objs[o]) for o in names),
        ))
    return frames


def _consistent(hands, objs, need, level: float) -> bool:
    for (h, o), rule in need.items():
        ov = iou(hands[h], objs[o])
        if rule == "touch" and not ov > level:
            return False
        if rule == "zero" and ov != 0.0:
            return False
        if rule == "below" and not ov < level:
            return False
    return True


def derive_seed(master_seed: int, index: int) -> int:
    """Per-sample seed as a pure function of (master_seed, index)."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generate_dataset(cfg: SynthConfig, n: int, master_seed: Optional[int] = None) -> List[SynthSample]:
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    master = cfg.seed if master_seed is None else master_seed
    return [generate_sequence(cfg, derive_seed(master, i), video_id=f"synth-{i:04d}") for i in range(n)]
