"""Oriented boxes, pairwise safety regions and their overlap measures.

Two overlap routes exist on purpose: exact convex-polygon clipping for
logging and verification, and a smooth softplus surrogate of the
separating-axis projections for the optimizer, which needs gradients and
conservatively over-approximates the true overlap.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .dynamics import AgentParams, AgentState
from .paths import (
    PathClampWarning,
    PathSample,
    PathSpec,
    RegionBounds,
    project_onto_path,
    region_of,
    sample_path,
    sample_path_many,
)

AHEAD_WINDOW = 50.0  # m of path ahead considered for rear-end coupling
PATH_CONFLICT_MARGIN = 0.5  # m added around each swept corridor


@dataclass(frozen=True)
class OrientedBox:
    cx: float
    cy: float
    heading: float
    half_length: float
    half_width: float

    def __post_init__(self):
        if self.half_length <= 0 or self.half_width <= 0:
            raise ValueError("box half-extents must be > 0")

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.heading), math.sin(self.heading)
        local = np.array(
            [
                [self.half_length, self.half_width],
                [-self.half_length, self.half_width],
                [-self.half_length, -self.half_width],
                [self.half_length, -self.half_width],
            ]
        )
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])


@dataclass(frozen=True)
class SafetyMargins:
    long: float = 1.5
    lat: float = 0.25
    headway: float = 0.5  # s converted into forward extension by closing speed
    sharpness: float = 4.0  # 1/m softplus steepness of the smooth surrogate

    def __post_init__(self):
        if self.long < 0 or self.lat < 0 or self.headway < 0:
            raise ValueError("margins must be >= 0")
        if self.sharpness <= 0:
            raise ValueError("sharpness must be > 0")


@dataclass(frozen=True)
class SafetyRegion:
    base: OrientedBox
    forward_extension: float
    rearward_extension: float = 0.0

    def __post_init__(self):
        if self.forward_extension < 0 or self.rearward_extension < 0:
            raise ValueError("extensions must be >= 0")

    def as_box(self) -> OrientedBox:
        """Single oriented rectangle: the base box stretched along heading."""
        shift = 0.5 * (self.forward_extension - self.rearward_extension)
        grow = 0.5 * (self.forward_extension + self.rearward_extension)
        return OrientedBox(
            self.base.cx + shift * math.cos(self.base.heading),
            self.base.cy + shift * math.sin(self.base.heading),
            self.base.heading,
            self.base.half_length + grow,
            self.base.half_width,
        )


@dataclass(frozen=True)
class ConflictSets:
    cross: frozenset[int]
    ahead: frozenset[int]
    combined: frozenset[int]


def bounding_box(sample: PathSample, length: float, width: float) -> OrientedBox:
    if length <= 0 or width <= 0:
        raise ValueError("vehicle dimensions must be > 0")
    return OrientedBox(sample.x_g, sample.y_g, sample.psi, length / 2.0, width / 2.0)


def closing_speed(self_v: float, self_psi: float, other_v: float, other_psi: float) -> float:
    """Own speed minus the other's velocity projected on own heading."""
    return self_v - other_v * math.cos(other_psi - self_psi)


def safety_region(
    self_sample: PathSample,
    self_params: AgentParams,
    other_sample: PathSample,
    other_v: float,
    self_v: float,
    margins: SafetyMargins,
) -> SafetyRegion:
    """Own footprint inflated by fixed margins plus a motion-dependent nose.

    The forward extension covers the distance closed on the other agent
    within the headway time; it vanishes when not approaching.
    """
    base = OrientedBox(
        self_sample.x_g,
        self_sample.y_g,
        self_sample.psi,
        self_params.length / 2.0 + margins.long,
        self_params.width / 2.0 + margins.lat,
    )
    closing = closing_speed(self_v, self_sample.psi, other_v, other_sample.psi)
    return SafetyRegion(base, margins.headway * max(0.0, closing))


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex subject by a convex CCW clip polygon."""
    output = subject
    n = len(clip)
    for k in range(n):
        if len(output) == 0:
            break
        a = clip[k]
        b = clip[(k + 1) % n]
        edge = b - a
        inp = output
        output = []
        prev = inp[-1]
        prev_in = edge[0] * (prev[1] - a[1]) - edge[1] * (prev[0] - a[0]) >= 0
        for cur in inp:
            cur_in = edge[0] * (cur[1] - a[1]) - edge[1] * (cur[0] - a[0]) >= 0
            if cur_in != prev_in:
                d = cur - prev
                denom = edge[0] * d[1] - edge[1] * d[0]
                t = (edge[0] * (a[1] - prev[1]) - edge[1] * (a[0] - prev[0])) / denom
                output.append(prev + t * d)
            if cur_in:
                output.append(cur)
            prev, prev_in = cur, cur_in
        output = np.array(output) if output else np.empty((0, 2))
    return output


def _ccw(corners: np.ndarray) -> np.ndarray:
    area2 = 0.0
    n = len(corners)
    for k in range(n):
        x1, y1 = corners[k]
        x2, y2 = corners[(k + 1) % n]
        area2 += x1 * y2 - x2 * y1
    return corners if area2 >= 0 else corners[::-1]


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def area_overlap(region: SafetyRegion | OrientedBox, other: OrientedBox) -> float:
    """Exact intersection area between the (extended) region and a box."""
    box = region.as_box() if isinstance(region, SafetyRegion) else region
    poly = _clip_polygon(_ccw(box.corners()), _ccw(other.corners()))
    return _polygon_area(poly)


def _segment_point_dist(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    t = float(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-300))
    t = min(max(t, 0.0), 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def box_distance(first: SafetyRegion | OrientedBox, second: OrientedBox) -> float:
    """Euclidean clearance between two convex boxes; 0 when they overlap."""
    b1 = first.as_box() if isinstance(first, SafetyRegion) else first
    if area_overlap(b1, second) > 0.0:
        return 0.0
    c1 = b1.corners()
    c2 = second.corners()
    best = math.inf
    for poly_a, poly_b in ((c1, c2), (c2, c1)):
        for p in poly_a:
            for k in range(4):
                best = min(best, _segment_point_dist(p, poly_b[k], poly_b[(k + 1) % 4]))
    return best


def _softplus(x: np.ndarray, beta: float) -> np.ndarray:
    return np.logaddexp(0.0, beta * x) / beta


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def smooth_overlap_core(
    crx, cry, theta, a_r, b_r, cox, coy, theta_o, a_o, b_o, beta: float
):
    """Smooth overlap of two rectangles projected on the first one's axes.

    All arguments broadcast as numpy arrays. Returns the surrogate value and
    its partial derivatives w.r.t. the first rectangle's center, heading and
    half-length, plus the second rectangle's center (for testing).

    The 1-D interval overlaps along the region's body axes are pushed
    through a softplus, so the product upper-bounds the hinge product (and
    therefore the true intersection area) and stays differentiable.
    """
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    dx, dy = cox - crx, coy - cry
    d_u = dx * cos_t + dy * sin_t
    d_n = -dx * sin_t + dy * cos_t
    delta = theta_o - theta
    cd, sd = np.cos(delta), np.sin(delta)
    rho_u = a_o * np.abs(cd) + b_o * np.abs(sd)
    rho_n = a_o * np.abs(sd) + b_o * np.abs(cd)
    o_u = a_r + rho_u - np.abs(d_u)
    o_n = b_r + rho_n - np.abs(d_n)

    sp_u, sp_n = _softplus(o_u, beta), _softplus(o_n, beta)
    sg_u, sg_n = _sigmoid(beta * o_u), _sigmoid(beta * o_n)
    value = sp_u * sp_n
    d_ou = sg_u * sp_n  # dV/do_u
    d_on = sp_u * sg_n

    sign_du, sign_dn = np.sign(d_u), np.sign(d_n)
    drho_u = (-a_o * np.sign(cd) * sd + b_o * np.sign(sd) * cd)
    drho_n = (a_o * np.sign(sd) * cd - b_o * np.sign(cd) * sd)

    d_crx = d_ou * (-sign_du) * (-cos_t) + d_on * (-sign_dn) * (sin_t)
    d_cry = d_ou * (-sign_du) * (-sin_t) + d_on * (-sign_dn) * (-cos_t)
    # d(d_u)/dtheta = d_n, d(d_n)/dtheta = -d_u, d(delta)/dtheta = -1
    d_theta = (
        d_ou * (-sign_du * d_n - drho_u)
        + d_on * (sign_dn * d_u - drho_n)
    )
    d_ar = d_ou
    d_cox = d_ou * (-sign_du) * cos_t + d_on * (-sign_dn) * (-sin_t)
    d_coy = d_ou * (-sign_du) * sin_t + d_on * (-sign_dn) * cos_t
    return value, d_crx, d_cry, d_theta, d_ar, d_cox, d_coy


def smooth_area_overlap(region: SafetyRegion | OrientedBox, other: OrientedBox, sharpness: float) -> float:
    """Differentiable conservative surrogate of area_overlap."""
    if sharpness <= 0:
        raise ValueError("sharpness must be > 0")
    box = region.as_box() if isinstance(region, SafetyRegion) else region
    value, *_ = smooth_overlap_core(
        box.cx, box.cy, box.heading, box.half_length, box.half_width,
        other.cx, other.cy, other.heading, other.half_length, other.half_width,
        sharpness,
    )
    return float(value)


def paths_conflict(
    path_i: PathSpec,
    bounds_i: RegionBounds,
    path_l: PathSpec,
    bounds_l: RegionBounds,
    width_i: float,
    width_l: float,
    cr_half_width: float,
    margin: float = PATH_CONFLICT_MARGIN,
) -> bool:
    """Do the swept corridors of two routes meet inside the critical region?

    Each corridor is the centerline inflated by half the vehicle width plus
    a margin; the test samples both critical-region portions densely.
    """
    pts = []
    for path, bounds in ((path_i, bounds_i), (path_l, bounds_l)):
        s = np.arange(bounds.s_cr_in, min(bounds.s_cr_out, path.total_length) + 0.1, 0.1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PathClampWarning)
            x, y, _, _ = sample_path_many(path, np.clip(s, 0.0, path.total_length))
        inside = (np.abs(x) <= cr_half_width) & (np.abs(y) <= cr_half_width)
        pts.append(np.column_stack([x[inside], y[inside]]))
    if len(pts[0]) == 0 or len(pts[1]) == 0:
        return False
    d2 = (
        (pts[0][:, None, 0] - pts[1][None, :, 0]) ** 2
        + (pts[0][:, None, 1] - pts[1][None, :, 1]) ** 2
    )
    threshold = width_i / 2.0 + width_l / 2.0 + 2.0 * margin
    return bool(np.min(d2) < threshold * threshold)


@dataclass(frozen=True)
class AgentView:
    """Frozen per-agent snapshot the conflict-set assembly reads."""

    state: AgentState
    path: PathSpec
    bounds: RegionBounds
    params: AgentParams


def ahead_set(i: int, views: Mapping[int, AgentView], window: float = AHEAD_WINDOW) -> frozenset[int]:
    """Agents driving ahead of i on (the continuation of) i's own lane."""
    me = views[i]
    out = set()
    for l, view in views.items():
        if l == i:
            continue
        s_proj, lateral = project_onto_path(me.path, *_position(view))
        if lateral < me.params.width and 0.0 < s_proj - me.state.s <= window:
            out.add(l)
    return frozenset(out)


def _position(view: AgentView) -> tuple[float, float]:
    p = sample_path(view.path, min(view.state.s, view.path.total_length))
    return p.x_g, p.y_g


def conflict_sets(
    i: int,
    views: Mapping[int, AgentView],
    cross: set[int] | frozenset[int],
) -> ConflictSets:
    """Combine rear-end and crossing couplings per the agent's region.

    Inside the intersection control region both apply; outside only the
    rear-end set matters.
    """
    me = views[i]
    ahead = ahead_set(i, views)
    label = region_of(me.bounds, me.state.s)
    if label in ("icr", "bsr", "cr"):
        combined = frozenset(cross) | ahead
    else:
        combined = ahead
    return ConflictSets(frozenset(cross), ahead, combined)
