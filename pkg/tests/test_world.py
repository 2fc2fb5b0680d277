import math

import pytest
from hypothesis import given, settings, strategies as st

from abpsim.world import (AccessPoint, CoverageMap, Obstacle, Point, WaypointPath, World,
                          build_coverage, coverage_timeline, covered, position_at,
                          segment_blocked)

SQUARE = Obstacle([(4, -1), (6, -1), (6, 1), (4, 1)])
coord = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
point = st.tuples(coord, coord)


# -- obstacles ---------------------------------------------------------------
def test_obstacle_needs_three_vertices():
    with pytest.raises(ValueError):
        Obstacle([(0, 0), (1, 1)])


def test_obstacle_rejects_zero_area():
    with pytest.raises(ValueError):
        Obstacle([(0, 0), (1, 1), (2, 2)])


def test_obstacle_rejects_self_intersection():
    with pytest.raises(ValueError):
        Obstacle([(0, 0), (2, 2), (2, 0), (0, 2)])


def test_obstacle_rejects_non_finite():
    with pytest.raises(ValueError):
        Obstacle([(0, 0), (math.inf, 0), (0, 1)])


def test_containment_includes_boundary():
    assert SQUARE.contains((5, 0))
    assert SQUARE.contains((4, 0))
    assert not SQUARE.contains((3.9, 0))


# -- segment_blocked -----------------------------------------------------------
def test_segment_through_square_is_blocked():
    assert segment_blocked((0, 0), (10, 0), [SQUARE])


def test_segment_above_square_is_clear():
    assert not segment_blocked((0, 5), (10, 5), [SQUARE])


def test_no_obstacles_never_blocks():
    assert not segment_blocked((0, 0), (10, 0), [])


def test_grazing_an_edge_blocks():
    assert segment_blocked((0, 1), (10, 1), [SQUARE])
    assert segment_blocked((0, 3), (6, -3), [SQUARE])  # touches the (4, -1) corner only
    assert not segment_blocked((0, 1 + 1e-6), (10, 1 + 1e-6), [SQUARE])


def test_segment_blocked_matches_dense_sampling_examples():
    # dense point sampling along the segment with a point-in-polygon test
    for a, b in [((0, 0), (10, 0)), ((0, 5), (10, 5)), ((5, -3), (5, 3)), ((0, -3), (3, 0))]:
        samples = [(a[0] + (b[0] - a[0]) * i / 10_000, a[1] + (b[1] - a[1]) * i / 10_000)
                   for i in range(10_001)]
        assert segment_blocked(a, b, [SQUARE]) == any(SQUARE.contains(p) for p in samples)


@settings(max_examples=200, deadline=None)
@given(point, point)
def test_segment_blocked_is_symmetric(a, b):
    assert segment_blocked(a, b, [SQUARE]) == segment_blocked(b, a, [SQUARE])


# -- motion ----------------------------------------------------------------------
def test_position_interpolates_and_clamps():
    path = WaypointPath([(0, 0), (100, 0)], 10)
    assert position_at(path, 5) == Point(50, 0)
    assert position_at(path, 0) == Point(0, 0)
    assert position_at(path, 1e6) == Point(100, 0)
    with pytest.raises(ValueError):
        position_at(path, -1)


def test_segment_speed_override():
    path = WaypointPath([(0, 0), (100, 0), (100, 50)], 10, segment_speeds=[None, 5])
    assert path.duration == pytest.approx(10 + 10)
    assert position_at(path, 15) == Point(100, 25)


def test_path_validation():
    with pytest.raises(ValueError):
        WaypointPath([(0, 0)], 1)
    with pytest.raises(ValueError):
        WaypointPath([(0, 0), (1, 0)], 0)
    with pytest.raises(ValueError):
        WaypointPath([(0, 0), (1, 0)], 1, segment_speeds=[1, 2])


@settings(max_examples=100, deadline=None)
@given(st.lists(point, min_size=2, max_size=6), st.floats(0.1, 20),
       st.floats(0, 100), st.floats(1e-4, 1.0))
def test_position_is_lipschitz_in_time(pts, speed, t, eps):
    path = WaypointPath(pts, speed)
    p0, p1 = position_at(path, t), position_at(path, t + eps)
    assert math.dist(p0, p1) <= speed * eps * (1 + 1e-9) + 1e-9


# -- coverage ------------------------------------------------------------------------
AP = AccessPoint("a", (0, 0), 50, "w1")


def test_covered_examples():
    assert covered((0, 0), AP, [SQUARE])
    assert not covered((51, 0), AP, [])
    assert covered((50, 0), AP, [])
    assert not covered((10, 0), AP, [SQUARE])


def test_access_point_range_must_be_positive():
    with pytest.raises(ValueError):
        AccessPoint("x", (0, 0), 0, "w")


@settings(max_examples=100, deadline=None)
@given(point, st.floats(1, 60), st.floats(0, 30))
def test_coverage_is_monotone_in_range(p, r, extra):
    small = AccessPoint("a", (0, 0), r, "w")
    big = AccessPoint("a", (0, 0), r + extra, "w")
    if covered(p, small, [SQUARE]):
        assert covered(p, big, [SQUARE])


def test_single_ap_covering_whole_path():
    path = WaypointPath([(-10, 0), (10, 0)], 1)
    tl = coverage_timeline(path, [AP], [], 0.5)
    assert all(s == {"a"} for _, s in tl)


def test_coverage_edges_match_closed_form():
    # AP at (100, 30), range 50: chord |x - 100| <= 40 along y = 0 at 2 m/s
    path = WaypointPath([(0, 0), (300, 0)], 2)
    ap = AccessPoint("a", (100, 30), 50, "w")
    cov = build_coverage(path, [ap], [], dt=0.1, resolution=0.001)
    ((start, end),) = cov.intervals["a"]
    assert start / 1e6 == pytest.approx(30.0, abs=0.001)
    assert end / 1e6 == pytest.approx(70.0, abs=0.001)
    assert cov.gaps()[0][0] == 0 and cov.gaps()[0][1] == start


def test_halving_dt_refines_timeline():
    path = WaypointPath([(0, 0), (300, 0)], 2)
    ap = AccessPoint("a", (100, 30), 50, "w")
    coarse = dict(coverage_timeline(path, [ap], [SQUARE], 0.2))
    fine = dict(coverage_timeline(path, [ap], [SQUARE], 0.1))
    for t, s in coarse.items():
        assert fine[t] == s


def test_obstacle_shadow_splits_coverage():
    path = WaypointPath([(-60, -20), (60, -20)], 1)
    ap = AccessPoint("a", (0, 10), 80, "w")
    wall = Obstacle([(-5, -2), (5, -2), (5, 2), (-5, 2)])
    cov = build_coverage(path, [ap], [wall])
    assert len(cov.intervals["a"]) == 2
    assert len(cov.gaps()) >= 1


def test_coverage_map_queries():
    cov = CoverageMap({"a": [(0, 10)], "b": [(5, 20)]}, 30)
    assert cov.is_covered("a", 0) and not cov.is_covered("a", 10)
    assert cov.covering(7) == ["a", "b"]
    assert cov.gaps() == [(20, 2 ** 62)]


def test_world_checks_ids_and_wlans():
    path = WaypointPath([(0, 0), (1, 0)], 1)
    with pytest.raises(ValueError):
        World([AP, AccessPoint("a", (1, 1), 5, "w2")], [], path)
    with pytest.raises(ValueError):
        World([AP, AccessPoint("b", (1, 1), 5, "w1")], [], path)


def test_bundled_scenario_has_one_gap_near_925s(bundled):
    cov = bundled.world().coverage(bundled.run.dt, bundled.run.resolution, bundled.run.duration)
    gaps = [(a / 1e6, b / 1e6) for a, b in cov.gaps()]
    assert len(gaps) == 1
    start, end = gaps[0]
    assert start < 925 < end
    assert len(bundled.aps) == 6 and len(bundled.obstacles) >= 4
    assert len({ap.wlan for ap in bundled.aps}) == 6
