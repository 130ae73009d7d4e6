import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reach_rec.data import FrameLabel, Hand, ReachEvent, clips_from_video
from reach_rec.events import FusionPolicy, assemble_events
from reach_rec.features import feature_stream
from reach_rec.metrics import (
    ConfusionMatrix,
    build_report,
    confusion,
    evaluate,
    format_table,
    keyframe_delay,
    precision_recall,
    stream_outcome,
)
from reach_rec.synth import SynthConfig, generate_dataset

N, RN, R, RF = (int(x) for x in FrameLabel)


def test_perfect_prediction_diagonal():
    y = [N, RN, R, R, RF, N]
    m = confusion(y, y)
    assert np.count_nonzero(m.counts - np.diag(np.diag(m.counts))) == 0
    assert m.accuracy == 1.0
    assert precision_recall(m) == {"NoR": (1.0, 1.0), "Reach": (1.0, 1.0)}


def test_all_nor_against_reach():
    m = confusion([N] * 5, [R] * 5)
    assert precision_recall(m)["Reach"] == (None, 0.0)


def test_binarization_folds_reach_classes():
    m = confusion([N, R, R, R], [N, RN, R, RF])
    assert m.binary_accuracy == 1.0
    assert m.accuracy == 0.5


def test_length_mismatch():
    with pytest.raises(ValueError):
        confusion([N, N], [N])


def test_table_like_counts():
    # tp=49, fp=25, fn=51, tn=75
    truth = [R] * 49 + [N] * 25 + [R] * 51 + [N] * 75
    pred = [R] * 49 + [R] * 25 + [N] * 51 + [N] * 75
    p, r = precision_recall(confusion(pred, truth))["Reach"]
    assert p == pytest.approx(49 / 74) and round(p, 3) == 0.662
    assert r == 0.49


def test_undefined_precision_is_none_not_zero():
    pr = precision_recall(confusion([N, N], [N, R]))
    assert pr["Reach"] == (None, 0.0)
    assert pr["NoR"] == (0.5, 1.0)


def test_four_class_precision_recall():
    pr = precision_recall(confusion([N, RN, RN, RF], [N, RN, R, RF]), binary=False)
    assert pr["RN"] == (0.5, 1.0)
    assert pr["R"] == (None, 0.0)


labels = st.lists(st.integers(0, 3), min_size=1, max_size=80)


@settings(max_examples=200, deadline=None)
@given(labels.flatmap(lambda t: st.tuples(st.just(t), st.lists(st.integers(0, 3), min_size=len(t), max_size=len(t)))))
def test_accuracy_against_counter(pair):
    truth, pred = pair
    m = confusion(pred, truth)
    assert m.total == len(truth)
    assert m.accuracy == sum(a == b for a, b in zip(pred, truth)) / len(truth)
    assert m.binary_accuracy == sum((a > 0) == (b > 0) for a, b in zip(pred, truth)) / len(truth)


@settings(max_examples=200, deadline=None)
@given(labels.flatmap(lambda t: st.tuples(st.just(t), st.lists(st.integers(0, 3), min_size=len(t), max_size=len(t)))),
       st.permutations([1, 2, 3]))
def test_binary_scores_invariant_under_reach_relabeling(pair, perm):
    truth, pred = pair
    relabel = {0: 0, 1: perm[0], 2: perm[1], 3: perm[2]}
    a = precision_recall(confusion(pred, truth))
    b = precision_recall(confusion([relabel[p] for p in pred], truth))
    assert a == b


def test_confusion_sum():
    a = confusion([N, R], [N, N])
    b = confusion([RF], [RF])
    assert (a + b).total == 3
    assert isinstance(a + b, ConfusionMatrix)


# --- keyframe delay -----------------------------------------------------------

def _ev(on, off, hand=Hand.LEFT):
    return ReachEvent(hand, "o", on, off)


def test_identical_events_zero_delay():
    evs = [_ev(3, 9), _ev(20, 30)]
    res = keyframe_delay(evs, evs)
    assert res.onset_delays == [0, 0] and res.offset_delays == [0, 0]
    assert (res.matched, res.missed, res.spurious) == (2, 0, 0)


def test_late_onset():
    res = keyframe_delay([_ev(11, 20)], [_ev(10, 20)])
    assert res.onset_delays == [1] and res.offset_delays == [0]


def test_missed_event():
    res = keyframe_delay([], [_ev(10, 20)])
    assert (res.matched, res.missed, res.spurious) == (0, 1, 0)
    assert res.onset_delays == []


def test_window_and_hand_respected():
    res = keyframe_delay([_ev(21, 30), _ev(10, 20, Hand.RIGHT)], [_ev(10, 20)])
    assert (res.matched, res.missed, res.spurious) == (0, 1, 2)


event_lists = st.lists(st.tuples(st.integers(0, 100), st.integers(1, 15), st.sampled_from(list(Hand))),
                       max_size=8).map(lambda xs: [_ev(a, a + d, h) for a, d, h in xs])


@settings(max_examples=300, deadline=None)
@given(event_lists, event_lists)
def test_matching_is_one_to_one(pred, truth):
    res = keyframe_delay(pred, truth)
    assert res.matched + res.missed == len(truth)
    assert res.matched + res.spurious == len(pred)
    assert len({id(t) for t, _ in res.pairs}) == len({id(p) for _, p in res.pairs}) == res.matched
    for t, p in res.pairs:
        assert t.hand is p.hand and abs(t.onset_frame - p.onset_frame) <= 10


# --- evaluate -------------------------------------------------------------------

SAMPLES = generate_dataset(SynthConfig(), 12, master_seed=21)
CLIPS = [c for s in SAMPLES for c in clips_from_video(s.sequence, s.truth_events)]


def _oracle_scores(clip):
    """One-hot truth labels for either hand stream of ``clip``."""
    return lambda stream: np.eye(4)[clip.labels(stream.hand)]


@pytest.mark.parametrize("mode", ["fused", "scores_only"])
def test_perfect_model(mode):
    outcomes = []
    for clip in CLIPS:
        score = _oracle_scores(clip)
        for hand in Hand:
            stream = feature_stream(clip.sequence, hand)
            outcomes.append(stream_outcome(score(stream), stream, clip.labels(hand), clip.events,
                                           0.03, FusionPolicy(mode)))
    rep = build_report(outcomes)
    assert rep.frame_accuracy == 1.0
    assert rep.matched == rep.n_truth_events == len(CLIPS)
    assert rep.spurious == 0
    assert set(rep.onset_delays) == {0} and set(rep.offset_delays) == {0}
    assert rep.within_tolerance == 1.0


def test_majority_predictor_accuracy_is_prior():
    rep = evaluate(lambda s: np.tile(np.eye(4)[0], (len(s), 1)), 0.05, CLIPS, FusionPolicy("scores_only"))
    truth = np.concatenate([c.labels(h) for c in CLIPS for h in Hand])
    assert rep.frame_accuracy == pytest.approx(np.mean(truth == 0))
    assert rep.precision["Reach"] is None and rep.recall["Reach"] == 0.0
    assert rep.matched == 0 and rep.missed == rep.n_truth_events


def test_report_is_composition():
    rng = np.random.default_rng(0)
    cache = {}

    def score(stream):
        key = (stream.hand, tuple(stream.frame_indices))
        if key not in cache:
            cache[key] = rng.dirichlet(np.ones(4), len(stream))
        return cache[key]

    policy = FusionPolicy("rules_only")
    rep = evaluate(score, 0.05, CLIPS, policy)
    cm = ConfusionMatrix()
    onset, pred_all, total_truth = [], 0, 0
    for clip in CLIPS:
        for hand in Hand:
            stream = feature_stream(clip.sequence, hand)
            pred = score(stream).argmax(1)
            cm = cm + confusion(pred.tolist(), clip.labels(hand))
            evs = assemble_events(None, stream, 0.05, policy)
            truth = [e for e in clip.events if e.hand is hand]
            res = keyframe_delay(evs, truth)
            onset += res.onset_delays
            pred_all += len(evs)
            total_truth += len(truth)
    assert rep.confusion == cm.counts.tolist()
    assert rep.frame_accuracy == cm.accuracy
    pr = precision_recall(cm)
    assert rep.precision == {k: v[0] for k, v in pr.items()}
    assert rep.onset_delays == onset
    assert rep.matched + rep.spurious == pred_all
    assert rep.n_truth_events == total_truth
    assert evaluate(score, 0.05, CLIPS, policy) == rep


def test_evaluate_empty():
    with pytest.raises(ValueError):
        evaluate(lambda s: None, 0.05, [])


def test_report_json_and_table():
    rep = evaluate(lambda s: np.tile(np.eye(4)[0], (len(s), 1)), 0.05, CLIPS[:2], FusionPolicy("scores_only"))
    back = json.loads(rep.to_json())
    assert back["n_frames"] == rep.n_frames and back["precision"]["Reach"] is None
    table = format_table([("BabyNet", 1204, rep)])
    assert "BabyNet" in table and "1204" in table and "n/a" in table
    assert len(table.splitlines()) == 2
