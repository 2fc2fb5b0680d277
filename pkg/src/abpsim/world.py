"""Scenario geometry: obstacles, access points, waypoint mobility, coverage.

The radio model is a binary disc: a node is covered by an access point when it
is within range and the line of sight does not touch any obstacle.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

from .engine import US_PER_SECOND, us

EPS = 1e-9


class Point(NamedTuple):
    x: float
    y: float


def distance(a: Sequence[float], b: Sequence[float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _signed_area(vertices: Sequence[Point]) -> float:
    n = len(vertices)
    return 0.5 * sum(vertices[i][0] * vertices[(i + 1) % n][1]
                     - vertices[(i + 1) % n][0] * vertices[i][1] for i in range(n))


def _proper_cross(p1, p2, q1, q2) -> bool:
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    return ((d1 > 0) != (d2 > 0) and d1 != 0 and d2 != 0
            and (d3 > 0) != (d4 > 0) and d3 != 0 and d4 != 0)


def point_segment_distance(p, a, b) -> float:
    dx, dy = b[0] - a[0], b[1] - a[1]
    length2 = dx * dx + dy * dy
    if length2 == 0.0:
        return distance(p, a)
    t = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / length2
    t = min(1.0, max(0.0, t))
    return math.hypot(p[0] - (a[0] + t * dx), p[1] - (a[1] + t * dy))


def segment_distance(p1, p2, q1, q2) -> float:
    """Minimum distance between two closed segments."""
    if _proper_cross(p1, p2, q1, q2):
        return 0.0
    return min(point_segment_distance(p1, q1, q2), point_segment_distance(p2, q1, q2),
               point_segment_distance(q1, p1, p2), point_segment_distance(q2, p1, p2))


@dataclass(frozen=True)
class Obstacle:
    vertices: tuple[Point, ...]

    def __post_init__(self):
        verts = tuple(Point(float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 3:
            raise ValueError("obstacle needs at least 3 vertices")
        if not all(math.isfinite(c) for v in verts for c in v):
            raise ValueError("obstacle vertices must be finite")
        if abs(_signed_area(verts)) <= EPS:
            raise ValueError("obstacle has zero area")
        edges = self.edges()
        n = len(edges)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if segment_distance(*edges[i], *edges[j]) <= EPS:
                    raise ValueError("obstacle polygon is self-intersecting")
        xs = [v.x for v in verts]
        ys = [v.y for v in verts]
        object.__setattr__(self, "_bbox", (min(xs), min(ys), max(xs), max(ys)))

    def edges(self) -> list[tuple[Point, Point]]:
        v = self.vertices
        return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]

    def contains(self, p: Sequence[float]) -> bool:
        """Winding-number containment; boundary points (within EPS) count."""
        winding = 0
        for a, b in self.edges():
            if point_segment_distance(p, a, b) <= EPS:
                return True
            if a.y <= p[1]:
                if b.y > p[1] and _cross(a, b, p) > 0:
                    winding += 1
            elif b.y <= p[1] and _cross(a, b, p) < 0:
                winding -= 1
        return winding != 0

    def touches_segment(self, a: Sequence[float], b: Sequence[float]) -> bool:
        x0, y0, x1, y1 = self._bbox
        if (max(a[0], b[0]) < x0 - EPS or min(a[0], b[0]) > x1 + EPS
                or max(a[1], b[1]) < y0 - EPS or min(a[1], b[1]) > y1 + EPS):
            return False
        if self.contains(a) or self.contains(b):
            return True
        return any(segment_distance(a, b, p, q) <= EPS for p, q in self.edges())


@dataclass(frozen=True)
class AccessPoint:
    id: str
    position: Point
    range: float
    wlan: str
    wired_latency: float | None = None  # one-way AP -> proxy/Internet, seconds

    def __post_init__(self):
        object.__setattr__(self, "position", Point(*map(float, self.position)))
        if not self.range > 0:
            raise ValueError(f"access point {self.id}: range must be > 0")


@dataclass(frozen=True)
class WaypointPath:
    waypoints: tuple[Point, ...]
    speed: float
    segment_speeds: tuple[float | None, ...] | None = None

    def __post_init__(self):
        pts = tuple(Point(float(x), float(y)) for x, y in self.waypoints)
        object.__setattr__(self, "waypoints", pts)
        if len(pts) < 2:
            raise ValueError("path needs at least 2 waypoints")
        if not self.speed > 0:
            raise ValueError("path speed must be > 0")
        speeds = self.segment_speeds or (None,) * (len(pts) - 1)
        if len(speeds) != len(pts) - 1:
            raise ValueError("segment_speeds must have one entry per segment")
        speeds = tuple(self.speed if s is None else float(s) for s in speeds)
        if any(not s > 0 for s in speeds):
            raise ValueError("segment speeds must be > 0")
        object.__setattr__(self, "segment_speeds", speeds)
        starts = [0.0]
        for i, s in enumerate(speeds):
            starts.append(starts[-1] + distance(pts[i], pts[i + 1]) / s)
        object.__setattr__(self, "_starts", tuple(starts))

    @property
    def duration(self) -> float:
        """Seconds needed to walk the whole path."""
        return self._starts[-1]

    def max_speed(self) -> float:
        return max(self.segment_speeds)


def position_at(path: WaypointPath, t: float) -> Point:
    """Position after ``t`` seconds; clamps to the last waypoint."""
    if t < 0:
        raise ValueError("t must be >= 0")
    starts = path._starts
    if t >= starts[-1]:
        return path.waypoints[-1]
    i = bisect.bisect_right(starts, t) - 1
    a, b = path.waypoints[i], path.waypoints[i + 1]
    span = starts[i + 1] - starts[i]
    f = 0.0 if span == 0 else (t - starts[i]) / span
    return Point(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y))


def segment_blocked(a: Sequence[float], b: Sequence[float],
                    obstacles: Iterable[Obstacle]) -> bool:
    """True iff segment a-b touches an obstacle's interior or boundary."""
    return any(ob.touches_segment(a, b) for ob in obstacles)


def covered(p: Sequence[float], ap: AccessPoint, obstacles: Iterable[Obstacle]) -> bool:
    if distance(p, ap.position) > ap.range:
        return False
    if distance(p, ap.position) == 0.0:
        return True
    return not segment_blocked(p, ap.position, obstacles)


def coverage_timeline(path: WaypointPath, aps: Sequence[AccessPoint],
                      obstacles: Sequence[Obstacle], dt: float,
                      until: float | None = None) -> list[tuple[int, frozenset[str]]]:
    """Coverage sets sampled every ``dt`` seconds along the path.

    Times are integer microseconds. Sampling stops at ``until`` (defaults to
    the end of the path; coverage is constant afterwards).
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    end = path.duration if until is None else until
    n = int(math.floor(end / dt + 1e-9))
    out = []
    for k in range(n + 1):
        t = k * dt
        p = position_at(path, t)
        out.append((us(t), frozenset(ap.id for ap in aps if covered(p, ap, obstacles))))
    if out[-1][0] < us(end):
        p = position_at(path, end)
        out.append((us(end), frozenset(ap.id for ap in aps if covered(p, ap, obstacles))))
    return out


@dataclass
class CoverageMap:
    """Per-AP coverage intervals ``[enter_us, exit_us)`` along a path.

    Built by sampling and refining each transition instant by bisection, so
    every boundary is within ``resolution`` of the geometric truth. Intervals
    shorter than the sampling step may be missed.
    """

    intervals: dict[str, list[tuple[int, int]]]
    horizon: int  # end of sampled time; coverage at t >= horizon is that at horizon
    _starts: dict[str, list[int]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._starts = {k: [s for s, _ in v] for k, v in self.intervals.items()}

    def is_covered(self, ap_id: str, t: int) -> bool:
        starts = self._starts.get(ap_id)
        if not starts:
            return False
        i = bisect.bisect_right(starts, t) - 1
        return i >= 0 and t < self.intervals[ap_id][i][1]

    def covering(self, t: int) -> list[str]:
        return [ap for ap in self.intervals if self.is_covered(ap, t)]

    def transitions(self) -> list[tuple[int, str, bool]]:
        """Sorted (time, ap_id, entering) tuples."""
        out = []
        for ap, spans in self.intervals.items():
            for s, e in spans:
                if s > 0:
                    out.append((s, ap, True))
                if e < END_OF_TIME:
                    out.append((e, ap, False))
        out.sort(key=lambda x: (x[0], not x[2], x[1]))
        return out

    def gaps(self) -> list[tuple[int, int]]:
        """Intervals where no access point covers the node."""
        events = sorted({0, *[t for t, _, _ in self.transitions()]})
        out: list[tuple[int, int]] = []
        start = None
        for t in events:
            empty = not self.covering(t)
            if empty and start is None:
                start = t
            elif not empty and start is not None:
                out.append((start, t))
                start = None
        if start is not None:
            out.append((start, END_OF_TIME))
        return out


END_OF_TIME = 2 ** 62


def build_coverage(path: WaypointPath, aps: Sequence[AccessPoint],
                   obstacles: Sequence[Obstacle], dt: float = 0.1,
                   resolution: float = 0.001, until: float | None = None) -> CoverageMap:
    samples = coverage_timeline(path, aps, obstacles, dt, until)
    by_id = {ap.id: ap for ap in aps}
    res_us = max(1, us(resolution))

    def cov(ap_id: str, t_us: int) -> bool:
        return covered(position_at(path, t_us / US_PER_SECOND), by_id[ap_id], obstacles)

    def refine(ap_id: str, lo: int, hi: int, state_lo: bool) -> int:
        # first instant whose state differs from state_lo, within res_us
        while hi - lo > res_us:
            mid = (lo + hi) // 2
            if cov(ap_id, mid) == state_lo:
                lo = mid
            else:
                hi = mid
        return hi

    intervals: dict[str, list[tuple[int, int]]] = {}
    for ap in aps:
        spans = []
        start = 0 if ap.id in samples[0][1] else None
        for (t0, s0), (t1, s1) in zip(samples, samples[1:]):
            a, b = ap.id in s0, ap.id in s1
            if a == b:
                continue
            edge = refine(ap.id, t0, t1, a)
            if b:
                start = edge
            else:
                spans.append((start, edge))
                start = None
        if start is not None:
            spans.append((start, END_OF_TIME))
        intervals[ap.id] = spans
    return CoverageMap(intervals, samples[-1][0])


@dataclass
class World:
    """Immutable scenario geometry with a cached coverage map."""

    aps: tuple[AccessPoint, ...]
    obstacles: tuple[Obstacle, ...]
    path: WaypointPath
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.aps = tuple(self.aps)
        self.obstacles = tuple(self.obstacles)
        ids = [ap.id for ap in self.aps]
        if len(set(ids)) != len(ids):
            raise ValueError("access point ids must be unique")
        wlans = [ap.wlan for ap in self.aps]
        if len(set(wlans)) != len(wlans):
            raise ValueError("each access point needs its own WLAN")

    def ap(self, ap_id: str) -> AccessPoint:
        for ap in self.aps:
            if ap.id == ap_id:
                return ap
        raise KeyError(ap_id)

    def coverage(self, dt: float = 0.1, resolution: float = 0.001,
                 until: float | None = None) -> CoverageMap:
        key = (dt, resolution, until)
        if key not in self._cache:
            self._cache[key] = build_coverage(self.path, self.aps, self.obstacles,
                                              dt, resolution, until)
        return self._cache[key]
