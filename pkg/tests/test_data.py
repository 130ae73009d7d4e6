import json
import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reach_rec.data import (
    DataError,
    FrameDetections,
    FrameLabel,
    Hand,
    ReachEvent,
    VideoSequence,
    clips_from_video,
    events_from_labels,
    labels_from_events,
    parse_annotations,
    parse_detections,
    serialize_annotations,
    serialize_detections,
    split_dataset,
    split_sizes,
    validate_annotations,
)
from reach_rec.geometry import BoundingBox

N, RN, R, RF = FrameLabel.NoR, FrameLabel.RN, FrameLabel.R, FrameLabel.RF

LINE = {
    "video_id": "v1", "frame": 0, "frame_w": 640, "frame_h": 480,
    "boxes": [
        {"label": "left_hand", "x": 10.0, "y": 20.0, "w": 32.0, "h": 32.0},
        {"label": "object", "id": "toy1", "x": 100.0, "y": 90.0, "w": 40.0, "h": 40.0},
    ],
}


def _line(**changes):
    rec = json.loads(json.dumps(LINE))
    rec.update(changes)
    return json.dumps(rec)


# --- detections -------------------------------------------------------------

def test_parse_single_line():
    seqs = parse_detections(_line())
    assert len(seqs) == 1
    seq = seqs[0]
    assert seq.video_id == "v1" and len(seq) == 1
    fd = seq.frames[0]
    assert fd.left_hand == BoundingBox(10, 20, 32, 32)
    assert fd.right_hand is None
    assert fd.object_box("toy1") == BoundingBox(100, 90, 40, 40)
    assert fd.frame_size == (640, 480)


@pytest.mark.parametrize("payload", ["", b"", "\n\n"])
def test_parse_empty(payload):
    assert parse_detections(payload) == []


def test_negative_width_names_record():
    bad = json.loads(_line())
    bad["boxes"][0]["w"] = -1
    text = _line() + "\n" + json.dumps(dict(bad, frame=1))
    with pytest.raises(DataError, match="line 2"):
        parse_detections(text)


@pytest.mark.parametrize("text, needle", [
    ("{not json", "line 1"),
    (_line() + "\n" + _line(), "duplicate"),
    (_line(boxes=[{"label": "nose", "x": 0, "y": 0, "w": 1, "h": 1}]), "line 1"),
    (_line(boxes=[{"label": "object", "x": 0, "y": 0, "w": 1, "h": 1}]), "line 1"),
])
def test_parse_errors(text, needle):
    with pytest.raises(DataError, match=needle):
        parse_detections(text)


def test_parse_groups_and_sorts():
    lines = [_line(video_id="b", frame=2), _line(video_id="a", frame=1),
             _line(video_id="b", frame=0), _line(video_id="a", frame=0)]
    seqs = parse_detections("\n".join(lines))
    assert sorted(s.video_id for s in seqs) == ["a", "b"]
    for s in seqs:
        idx = [f.frame_index for f in s.frames]
        assert idx == sorted(idx)


def _frame(i, with_right=False):
    return FrameDetections(
        frame_index=i,
        frame_size=(640.0, 480.0),
        infant=BoundingBox(200.0, 100.0, 240.0, 300.0),
        left_hand=BoundingBox(10.0 + i, 20.25, 32.0, 30.5),
        right_hand=BoundingBox(400.0, 300.0 - i, 28.0, 28.0) if with_right else None,
        objects=(("a", BoundingBox(1.5, 2.5, 3.0, 4.0)), ("b", BoundingBox(0.1, 0.2, 0.3, 0.4))),
    )


def test_detections_round_trip():
    seqs = [VideoSequence("v1", [_frame(i, i % 2 == 0) for i in range(5)]),
            VideoSequence("v2", [_frame(i) for i in (3, 4, 7)])]
    assert parse_detections(serialize_detections(seqs)) == seqs


# --- annotations ------------------------------------------------------------

HEADER = "video_id,reach_id,hand,object_id,onset_frame,offset_frame\n"


def test_parse_annotation_row():
    got = parse_annotations(HEADER + "v1,1,L,toy,10,22\n")
    assert got == {"v1": [ReachEvent(Hand.LEFT, "toy", 10, 22, "1")]}


def test_annotations_grouped():
    got = parse_annotations(HEADER + "v1,1,L,toy,10,22\nv1,2,R,ball,30,35\nv2,1,L,toy,1,4\n")
    assert [len(got[k]) for k in ("v1", "v2")] == [2, 1]


@pytest.mark.parametrize("row", [
    "v1,1,L,toy,22,10",
    "v1,1,L,toy,10,10",
    "v1,1,X,toy,10,22",
    "v1,1,L,toy,ten,22",
])
def test_annotation_errors(row):
    with pytest.raises(DataError):
        parse_annotations(HEADER + row + "\n")


def test_annotations_round_trip():
    ev = {"v1": [ReachEvent(Hand.LEFT, "toy", 10, 22, "1"), ReachEvent(Hand.RIGHT, "cup", 12, 30, "2")],
          "v2": [ReachEvent(Hand.RIGHT, "ball", 0, 3, "1")]}
    assert parse_annotations(serialize_annotations(ev)) == ev


# --- labels -----------------------------------------------------------------

def test_labels_from_single_event():
    got = labels_from_events([ReachEvent(Hand.LEFT, "o", 10, 13)], 16, Hand.LEFT)
    assert got == [N] * 10 + [RN, R, R, RF] + [N, N]


def test_labels_without_events():
    assert labels_from_events([], 5, Hand.LEFT) == [N] * 5


def test_adjacent_events_overlap():
    evs = [ReachEvent(Hand.LEFT, "o", 2, 4), ReachEvent(Hand.LEFT, "o", 4, 6)]
    with pytest.raises(DataError, match="frame 4"):
        labels_from_events(evs, 10, Hand.LEFT)


def test_other_hand_ignored():
    evs = [ReachEvent(Hand.LEFT, "o", 2, 4), ReachEvent(Hand.RIGHT, "o", 3, 6)]
    assert labels_from_events(evs, 8, Hand.RIGHT) == [N, N, N, RN, R, R, RF, N]


@pytest.mark.parametrize("labels, expected", [
    ([N, RN, R, RF, N], [(1, 3)]),
    ([N] * 6, []),
    ([RN, RF, RN, R, RF], [(0, 1), (2, 4)]),
])
def test_events_from_labels(labels, expected):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert events_from_labels(labels) == expected


@pytest.mark.parametrize("labels, expected", [
    ([RN, R, R], []),
    ([R, RF, N], []),
    ([RN, R, N, RN, RF], [(3, 4)]),
])
def test_malformed_runs_warn(labels, expected):
    with pytest.warns(UserWarning):
        assert events_from_labels(labels) == expected


@st.composite
def event_sets(draw):
    n = draw(st.integers(2, 120))
    cuts = sorted(draw(st.sets(st.integers(0, n - 1), max_size=12)))
    # consecutive cut pairs become events; pairs are disjoint by construction
    spans = [(a, b) for a, b in zip(cuts[::2], cuts[1::2])]
    return n, spans


@settings(max_examples=300, deadline=None)
@given(event_sets())
def test_labels_events_round_trip(case):
    n, spans = case
    evs = [ReachEvent(Hand.LEFT, "o", a, b) for a, b in spans]
    labels = labels_from_events(evs, n, Hand.LEFT)
    assert events_from_labels(labels) == spans


# --- validation -------------------------------------------------------------

def _seq(n=40):
    return VideoSequence("v", [_frame(i, True) for i in range(n)])


def _ev(on, off, hand=Hand.LEFT, obj="a"):
    return ReachEvent(hand, obj, on, off)


def test_identical_double_annotation():
    evs = [_ev(5, 15), _ev(20, 30, Hand.RIGHT, "b")]
    rep = validate_annotations(_seq(), evs, list(evs))
    assert rep.flags == []
    assert rep.merged == sorted(evs, key=lambda e: e.onset_frame)


def test_small_disagreement_merges_floor_mean():
    rep = validate_annotations(_seq(), [_ev(10, 20)], [_ev(12, 20)])
    assert rep.flags == []
    assert rep.merged == [_ev(11, 20)]
    rep = validate_annotations(_seq(), [_ev(10, 20)], [_ev(13, 21)])
    assert rep.merged == [_ev(11, 20)]


def test_large_disagreement_flagged():
    rep = validate_annotations(_seq(), [_ev(10, 20)], [_ev(15, 20)])
    assert len(rep.flags) == 1 and "disagree" in rep.flags[0]
    assert rep.merged == [_ev(10, 20)]


@pytest.mark.parametrize("events, needle", [
    ([_ev(30, 45)], "out of bounds"),
    ([_ev(5, 10, obj="zz")], "no box for object"),
    ([_ev(5, 12), _ev(10, 20)], "overlap"),
])
def test_validation_flags(events, needle):
    rep = validate_annotations(_seq(), events)
    assert any(needle in f for f in rep.flags)
    assert not rep.ok


def test_missing_hand_box_flagged():
    frames = [_frame(i) for i in range(20)]  # no right hand
    rep = validate_annotations(VideoSequence("v", frames), [_ev(3, 9, Hand.RIGHT)])
    assert sum("right_hand" in f for f in rep.flags) == 2


def test_frame_gap_flagged():
    seq = VideoSequence("v", [_frame(i) for i in (0, 1, 2, 5, 6)])
    assert any("missing between 2 and 5" in f for f in validate_annotations(seq, []).flags)


# --- splitting --------------------------------------------------------------

@pytest.mark.parametrize("n, sizes", [
    (63, (38, 9, 16)),
    (100, (60, 15, 25)),
    (3, (2, 0, 1)),
])
def test_split_sizes(n, sizes):
    assert split_sizes(n, (0.60, 0.15, 0.25)) == sizes


@pytest.mark.parametrize("n", [3, 10, 63, 100, 257])
def test_split_is_partition(n):
    items = [f"clip{i}" for i in range(n)]
    train, val, test = split_dataset(items, seed=5)
    assert (len(train), len(val), len(test)) == split_sizes(n, (0.60, 0.15, 0.25))
    assert sorted(train + val + test) == sorted(items)
    assert len(set(train) | set(val) | set(test)) == n


def test_split_deterministic():
    items = list(range(63))
    assert split_dataset(items, seed=9) == split_dataset(items, seed=9)
    assert split_dataset(items, seed=9) != split_dataset(items, seed=10)


@pytest.mark.parametrize("items, ratios", [
    ([1, 2], (0.6, 0.15, 0.25)),
    (list(range(10)), (0.6, 0.2, 0.25)),
    (list(range(10)), (0.0, 0.5, 0.5)),
    (list(range(10)), (0.5, 0.5)),
])
def test_split_errors(items, ratios):
    with pytest.raises(ValueError):
        split_dataset(items, ratios, seed=0)


# --- clips ------------------------------------------------------------------

def test_clips_one_per_reach():
    seq = _seq(60)
    evs = [_ev(5, 12), _ev(30, 40, Hand.RIGHT, "b"), _ev(35, 45)]
    clips = clips_from_video(seq, evs)
    assert [c.clip_id for c in clips] == ["v#0", "v#1"]
    assert [len(c.events) for c in clips] == [1, 2]
    covered = [f.frame_index for c in clips for f in c.sequence.frames]
    assert covered == list(range(60))
    assert clips[0].labels(Hand.LEFT)[5:13] == [RN] + [R] * 6 + [RF]


def test_single_reach_clip_keeps_video_id():
    clips = clips_from_video(_seq(20), [_ev(3, 9)])
    assert [c.clip_id for c in clips] == ["v"]
