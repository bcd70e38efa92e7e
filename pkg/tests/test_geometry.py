"""Oriented-box geometry, overlap measures, and conflict-set assembly tests."""

import math

import numpy as np
import pytest

from intersim.dynamics import AgentParams, AgentState
from intersim.geometry import (
    AgentView,
    OrientedBox,
    SafetyMargins,
    ahead_set,
    area_overlap,
    bounding_box,
    box_distance,
    conflict_sets,
    paths_conflict,
    safety_region,
    smooth_area_overlap,
    smooth_overlap_core,
)
from intersim.paths import (
    IntersectionGeometry,
    PathSample,
    RouteSpec,
    build_path,
    compute_regions,
)

PARAMS = AgentParams(0.3, -7.0, 4.0, 15.0, 3.5, 7.0, 5.0, 2.0, 1.0, 1.0, 20.0, 14.0)
MARGINS = SafetyMargins()


def mc_overlap(box_a: OrientedBox, box_b: OrientedBox, rng, n=1_000_000):
    """Monte-Carlo overlap-area oracle: sample uniformly inside the first box."""
    u = rng.uniform(-box_a.half_length, box_a.half_length, n)
    w = rng.uniform(-box_a.half_width, box_a.half_width, n)
    c, s = math.cos(box_a.heading), math.sin(box_a.heading)
    px = box_a.cx + u * c - w * s
    py = box_a.cy + u * s + w * c

    cb, sb = math.cos(box_b.heading), math.sin(box_b.heading)
    dx = px - box_b.cx
    dy = py - box_b.cy
    ub = dx * cb + dy * sb
    wb = -dx * sb + dy * cb
    hits = (np.abs(ub) <= box_b.half_length) & (np.abs(wb) <= box_b.half_width)
    area_a = 4.0 * box_a.half_length * box_a.half_width
    return area_a * hits.mean()


# -- bounding_box -------------------------------------------------------------


def test_axis_aligned_corners():
    box = bounding_box(PathSample(0, 0, 0, 0), 5.0, 2.0)
    corners = {tuple(np.round(c, 9)) for c in box.corners()}
    assert corners == {(2.5, 1.0), (-2.5, 1.0), (-2.5, -1.0), (2.5, -1.0)}


def test_quarter_turn_corners():
    box = bounding_box(PathSample(0, 0, math.pi / 2, 0), 5.0, 2.0)
    corners = {tuple(np.round(c, 9)) for c in box.corners()}
    assert corners == {(1.0, 2.5), (-1.0, 2.5), (-1.0, -2.5), (1.0, -2.5)}


def test_diagonal_extent():
    box = bounding_box(PathSample(0, 0, math.pi / 4, 0), 5.0, 2.0)
    x_extent = box.corners()[:, 0].max()
    assert x_extent == pytest.approx((2.5 + 1.0) / math.sqrt(2), abs=1e-9)


# -- safety_region ------------------------------------------------------------


def test_stationary_pair_has_base_region_only():
    me = PathSample(0, 0, 0, 0)
    other = PathSample(20, 0, 0, 0)
    region = safety_region(me, PARAMS, other, 0.0, 0.0, MARGINS)
    assert region.forward_extension == 0.0
    assert region.base.half_length == pytest.approx(2.5 + MARGINS.long)
    assert region.base.half_width == pytest.approx(1.0 + MARGINS.lat)


def test_perpendicular_crossing_extension():
    me = PathSample(0, 0, 0, 0)
    other = PathSample(20, 0, math.pi / 2, 0)  # crossing: zero projection
    region = safety_region(me, PARAMS, other, 10.0, 14.0, MARGINS)
    assert region.forward_extension == pytest.approx(0.5 * 14.0)


def test_matched_speed_leader_no_extension():
    me = PathSample(0, 0, 0, 0)
    other = PathSample(20, 0, 0, 0)
    region = safety_region(me, PARAMS, other, 14.0, 14.0, MARGINS)
    assert region.forward_extension == 0.0


def test_region_box_extends_forward_only():
    me = PathSample(0, 0, 0, 0)
    other = PathSample(20, 0, math.pi / 2, 0)
    region = safety_region(me, PARAMS, other, 0.0, 10.0, MARGINS)
    box = region.as_box()
    xs = box.corners()[:, 0]
    assert xs.max() == pytest.approx(2.5 + MARGINS.long + 5.0)
    assert xs.min() == pytest.approx(-(2.5 + MARGINS.long))


# -- area_overlap ---------------------------------------------------------------


def unit_square(cx=0.0, cy=0.0, heading=0.0):
    return OrientedBox(cx, cy, heading, 0.5, 0.5)


def test_disjoint_boxes_zero_overlap():
    assert area_overlap(unit_square(), unit_square(100.0, 0.0)) == 0.0


def test_identical_squares_full_overlap():
    assert area_overlap(unit_square(), unit_square()) == pytest.approx(1.0, abs=1e-12)


def test_half_offset_squares():
    value = area_overlap(unit_square(), unit_square(0.5, 0.0))
    assert value == pytest.approx(0.5, abs=1e-9)
    rng = np.random.default_rng(0)
    assert mc_overlap(unit_square(), unit_square(0.5, 0.0), rng) == pytest.approx(0.5, abs=1e-2)


def test_overlap_symmetry_for_plain_boxes():
    rng = np.random.default_rng(4)
    for _ in range(50):
        a = OrientedBox(*rng.uniform(-2, 2, 2), rng.uniform(0, math.pi), *rng.uniform(0.5, 3, 2))
        b = OrientedBox(*rng.uniform(-2, 2, 2), rng.uniform(0, math.pi), *rng.uniform(0.5, 3, 2))
        assert area_overlap(a, b) == pytest.approx(area_overlap(b, a), abs=1e-9)


def test_overlap_monotone_in_margins():
    me = PathSample(0, 0, 0.3, 0)
    other = PathSample(4.0, 1.0, 1.2, 0)
    last = -1.0
    for extra in (0.0, 0.5, 1.0, 2.0):
        margins = SafetyMargins(long=MARGINS.long + extra, lat=MARGINS.lat + extra)
        region = safety_region(me, PARAMS, other, 0.0, 0.0, margins)
        value = area_overlap(region, bounding_box(other, 5.0, 2.0))
        assert value >= last - 1e-12
        last = value


def test_exact_overlap_matches_monte_carlo_on_random_pairs():
    rng = np.random.default_rng(99)
    for _ in range(100):
        a = OrientedBox(*rng.uniform(-1.5, 1.5, 2), rng.uniform(0, 2 * math.pi), *rng.uniform(0.4, 1.5, 2))
        b = OrientedBox(*rng.uniform(-1.5, 1.5, 2), rng.uniform(0, 2 * math.pi), *rng.uniform(0.4, 1.5, 2))
        exact = area_overlap(a, b)
        approx = mc_overlap(a, b, rng)
        assert exact == pytest.approx(approx, abs=1e-2)


def test_box_distance_zero_iff_overlapping():
    assert box_distance(unit_square(), unit_square(0.3, 0.0)) == 0.0
    assert box_distance(unit_square(), unit_square(3.0, 0.0)) == pytest.approx(2.0, abs=1e-9)


# -- smooth_area_overlap ----------------------------------------------------------


def test_far_apart_smooth_overlap_tiny():
    assert smooth_area_overlap(unit_square(), unit_square(100.0, 0.0), 10.0) < 1e-6


def test_identical_squares_conservative():
    value = smooth_area_overlap(unit_square(), unit_square(), 10.0)
    assert value >= 1.0  # softplus upper-bounds the hinge product (exactly 1 here)


def test_smooth_dominates_exact_overlap():
    rng = np.random.default_rng(12)
    for _ in range(200):
        a = OrientedBox(*rng.uniform(-2, 2, 2), rng.uniform(0, math.pi), *rng.uniform(0.5, 2.5, 2))
        b = OrientedBox(*rng.uniform(-2, 2, 2), rng.uniform(0, math.pi), *rng.uniform(0.5, 2.5, 2))
        smooth = smooth_area_overlap(a, b, 4.0)
        assert smooth >= 0.0
        assert smooth >= area_overlap(a, b) - 1e-9
        if smooth == 0.0:  # conservatism direction of the implication
            assert area_overlap(a, b) == 0.0


def test_smooth_gradient_wrt_other_center():
    rng = np.random.default_rng(21)
    beta = 4.0
    for _ in range(30):
        args = dict(
            crx=rng.uniform(-1, 1), cry=rng.uniform(-1, 1), theta=rng.uniform(0, math.pi),
            a_r=rng.uniform(0.5, 3), b_r=rng.uniform(0.5, 2),
            cox=rng.uniform(-2, 2), coy=rng.uniform(-2, 2), theta_o=rng.uniform(0, math.pi),
            a_o=rng.uniform(0.5, 3), b_o=rng.uniform(0.5, 2),
        )
        _, _, _, _, _, d_cox, d_coy = smooth_overlap_core(beta=beta, **args)
        h = 1e-6
        for key, grad in (("cox", d_cox), ("coy", d_coy)):
            hi = dict(args); hi[key] += h
            lo = dict(args); lo[key] -= h
            fd = (smooth_overlap_core(beta=beta, **hi)[0] - smooth_overlap_core(beta=beta, **lo)[0]) / (2 * h)
            assert grad == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_smooth_gradient_wrt_region_parameters():
    rng = np.random.default_rng(22)
    beta = 4.0
    for _ in range(30):
        args = dict(
            crx=rng.uniform(-1, 1), cry=rng.uniform(-1, 1), theta=rng.uniform(0, math.pi),
            a_r=rng.uniform(0.5, 3), b_r=rng.uniform(0.5, 2),
            cox=rng.uniform(-2, 2), coy=rng.uniform(-2, 2), theta_o=rng.uniform(0, math.pi),
            a_o=rng.uniform(0.5, 3), b_o=rng.uniform(0.5, 2),
        )
        _, d_crx, d_cry, d_theta, d_ar, _, _ = smooth_overlap_core(beta=beta, **args)
        h = 1e-6
        for key, grad in (("crx", d_crx), ("cry", d_cry), ("theta", d_theta), ("a_r", d_ar)):
            hi = dict(args); hi[key] += h
            lo = dict(args); lo[key] -= h
            fd = (smooth_overlap_core(beta=beta, **hi)[0] - smooth_overlap_core(beta=beta, **lo)[0]) / (2 * h)
            assert grad == pytest.approx(fd, rel=1e-5, abs=1e-9)


# -- path conflicts and conflict sets ------------------------------------------------


GEOM = IntersectionGeometry()


def make_view(route, s, v=14.0):
    path = build_path(route)
    bounds = compute_regions(path, GEOM, PARAMS.v_max, PARAMS.a_x_min)
    return AgentView(AgentState(0.0, v, s), path, bounds, PARAMS)


def test_crossing_paths_conflict_but_parallel_lanes_do_not():
    ns = make_view(RouteSpec("N", "S"), 0.0)
    sn = make_view(RouteSpec("S", "N"), 0.0)
    ew = make_view(RouteSpec("E", "W"), 0.0)
    wn = make_view(RouteSpec("W", "N"), 0.0)

    def conflict(a, b):
        return paths_conflict(a.path, a.bounds, b.path, b.bounds, 2.0, 2.0, GEOM.cr_half_width)

    assert conflict(ns, ew)       # perpendicular crossing
    assert not conflict(ns, sn)   # opposite parallel lanes
    assert conflict(wn, ns)       # left turn across the oncoming straight
    assert conflict(wn, sn)       # merge onto the same exit lane
    assert conflict(wn, ew)


def test_ahead_set_same_lane_window():
    views = {
        1: make_view(RouteSpec("N", "S"), 10.0),
        2: make_view(RouteSpec("N", "S"), 30.0),   # 20 m ahead, same lane
        3: make_view(RouteSpec("N", "S"), 90.0),   # 80 m ahead: outside window
        4: make_view(RouteSpec("S", "N"), 10.0),   # opposite lane
    }
    assert ahead_set(1, views) == {2}
    assert ahead_set(2, views) == set()


def test_conflict_sets_by_region():
    # far outside the control region: rear-end only
    views = {
        1: make_view(RouteSpec("N", "S"), 0.0),
        2: make_view(RouteSpec("N", "S"), 20.0),
    }
    sets_far = conflict_sets(1, views, cross={2})
    assert sets_far.combined == {2}
    assert sets_far.cross == {2}

    # inside the control region: union with the crossing set
    views_in = {
        1: make_view(RouteSpec("N", "S"), 30.0),
        2: make_view(RouteSpec("N", "S"), 45.0),
        3: make_view(RouteSpec("E", "W"), 30.0),
    }
    sets_in = conflict_sets(1, views_in, cross={3})
    assert sets_in.ahead == {2}
    assert sets_in.combined == {2, 3}

    # nobody ahead, outside control region
    lonely = conflict_sets(1, {1: make_view(RouteSpec("N", "S"), 0.0)}, cross=set())
    assert lonely.combined == set()
