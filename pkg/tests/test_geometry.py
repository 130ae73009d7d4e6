import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import iou_lattice, iou_monte_carlo
from reach_rec.geometry import BoundingBox, Point2, center, distance, iou


@pytest.mark.parametrize("box, expected", [
    ((0, 0, 2, 2), (1, 1)),
    ((10, 20, 0, 0), (10, 20)),
    ((3, 4, 5, 7), (5.5, 7.5)),
])
def test_center(box, expected):
    assert center(BoundingBox(*box)) == Point2(*expected)


@pytest.mark.parametrize("p, q, expected", [
    ((0, 0), (3, 4), 5.0),
    ((1, 1), (1, 1), 0.0),
    ((-2, 0), (2, 3), 5.0),
])
def test_distance(p, q, expected):
    assert distance(Point2(*p), Point2(*q)) == expected
    assert distance(Point2(*q), Point2(*p)) == expected


@pytest.mark.parametrize("a, b, expected", [
    ((0, 0, 2, 2), (0, 0, 2, 2), 1.0),
    ((0, 0, 1, 1), (5, 5, 1, 1), 0.0),
    ((0, 0, 2, 2), (1, 1, 2, 2), 1 / 7),
    ((0, 0, 10, 10), (2, 2, 5, 5), 0.25),
    ((0, 0, 10, 10), (10, 0, 10, 10), 0.0),  # shared edge only
    ((0, 0, 0, 0), (0, 0, 0, 0), 0.0),  # two degenerate boxes
    ((0, 0, 4, 4), (2, 2, 0, 0), 0.0),  # a point inside a box
])
def test_iou_examples(a, b, expected):
    assert iou(BoundingBox(*a), BoundingBox(*b)) == pytest.approx(expected, abs=1e-15)


def test_iou_one_seventh_matches_lattice_count():
    a, b = (0, 0, 2, 2), (1, 1, 2, 2)
    assert iou_lattice(a, b, 0.01) == pytest.approx(1 / 7, abs=1e-12)
    assert iou(BoundingBox(*a), BoundingBox(*b)) == pytest.approx(1 / 7, abs=1e-15)


@pytest.mark.parametrize("bad", [
    (0, 0, -1, 2),
    (0, 0, 2, -0.5),
    (math.nan, 0, 1, 1),
    (0, math.inf, 1, 1),
])
def test_invalid_boxes_rejected(bad):
    with pytest.raises(ValueError):
        BoundingBox(*bad)


def test_from_corners():
    assert BoundingBox.from_corners(1, 2, 4, 8) == BoundingBox(1, 2, 3, 6)


coord = st.floats(-1e3, 1e3, allow_nan=False)
# sizes far below coordinate resolution are absorbed by float addition
size = st.one_of(st.just(0.0), st.floats(1e-3, 300))
boxes = st.builds(BoundingBox, coord, coord, size, size)


@settings(max_examples=300, deadline=None)
@given(boxes, boxes)
def test_iou_bounds_and_symmetry(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == iou(b, a)


@settings(max_examples=300, deadline=None)
@given(boxes, boxes, st.floats(-500, 500), st.floats(-500, 500))
def test_translation_invariance(a, b, dx, dy):
    ta, tb = a.translated(dx, dy), b.translated(dx, dy)
    assert iou(ta, tb) == pytest.approx(iou(a, b), abs=1e-9)
    assert distance(center(ta), center(tb)) == pytest.approx(distance(center(a), center(b)), rel=1e-9, abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(boxes, boxes, st.floats(0.01, 100))
def test_scale_covariance(a, b, s):
    sa, sb = a.scaled(s), b.scaled(s)
    assert iou(sa, sb) == pytest.approx(iou(a, b), abs=1e-9)
    assert distance(center(sa), center(sb)) == pytest.approx(s * distance(center(a), center(b)), rel=1e-9, abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(boxes, boxes)
def test_positive_iou_iff_interiors_meet(a, b):
    if a.area == 0 or b.area == 0:
        return
    interiors_meet = max(a.x, b.x) < min(a.x2, b.x2) and max(a.y, b.y) < min(a.y2, b.y2)
    assert (iou(a, b) > 0) == interiors_meet


def test_identical_boxes_have_unit_iou():
    rng = np.random.default_rng(3)
    for _ in range(200):
        b = BoundingBox(*rng.uniform(-100, 100, 2), *rng.uniform(0.1, 50, 2))
        assert iou(b, b) == 1.0


def _random_pair(rng):
    a = (rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(1, 60), rng.uniform(1, 60))
    # second box near the first so overlaps are common
    b = (a[0] + rng.uniform(-50, 50), a[1] + rng.uniform(-50, 50), rng.uniform(1, 60), rng.uniform(1, 60))
    return a, b


def test_iou_matches_monte_carlo_on_random_pairs():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        a, b = _random_pair(rng)
        est = iou_monte_carlo(a, b, 40_000, rng)
        worst = max(worst, abs(est - iou(BoundingBox(*a), BoundingBox(*b))))
    assert worst <= 0.01
