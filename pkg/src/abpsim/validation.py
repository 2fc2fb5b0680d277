"""Independent oracles for the geometry, broadcast and downtime code paths.

Each oracle recomputes a result by a different method than the production
code and reports the instances on which the two disagree.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .broadcast import AdhocNetwork, BackoffParams, run_broadcast
from .metrics import DowntimeRecord, downtime_oracle
from .world import Obstacle, segment_blocked

EPS = 1e-9


@dataclass
class OracleReport:
    check: str
    instances: int = 0
    mismatches: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.mismatches

    @property
    def counterexample(self):
        """Smallest mismatch by the instance's own size measure, if any."""
        if not self.mismatches:
            return None
        return min(self.mismatches, key=lambda m: m[0])

    def __str__(self) -> str:
        verdict = "ok" if self.passed else f"{len(self.mismatches)} mismatches"
        return f"{self.check}: {self.instances} instances, {verdict}"


# -- polygon containment ------------------------------------------------------------
def _raycast(poly: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Even-odd rule containment for many points at once."""
    x, y = pts[..., 0], pts[..., 1]
    inside = np.zeros(x.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > y) != (y2 > y)
        xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xint)
    return inside


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _segments_intersect(p1, p2, q1, q2) -> np.ndarray:
    """Exact-sign test (touching counts) between segment arrays p and one segment q."""
    d1 = np.sign(_orient(q1[0], q1[1], q2[0], q2[1], p1[:, 0], p1[:, 1]))
    d2 = np.sign(_orient(q1[0], q1[1], q2[0], q2[1], p2[:, 0], p2[:, 1]))
    d3 = np.sign(_orient(p1[:, 0], p1[:, 1], p2[:, 0], p2[:, 1], q1[0], q1[1]))
    d4 = np.sign(_orient(p1[:, 0], p1[:, 1], p2[:, 0], p2[:, 1], q2[0], q2[1]))
    proper = (d1 * d2 < 0) & (d3 * d4 < 0)

    def on(ax, ay, bx, by, cx, cy, d):
        return ((d == 0) & (np.minimum(ax, bx) <= cx) & (cx <= np.maximum(ax, bx))
                & (np.minimum(ay, by) <= cy) & (cy <= np.maximum(ay, by)))

    touch = (on(q1[0], q1[1], q2[0], q2[1], p1[:, 0], p1[:, 1], d1)
             | on(q1[0], q1[1], q2[0], q2[1], p2[:, 0], p2[:, 1], d2)
             | on(p1[:, 0], p1[:, 1], p2[:, 0], p2[:, 1], q1[0], q1[1], d3)
             | on(p1[:, 0], p1[:, 1], p2[:, 0], p2[:, 1], q2[0], q2[1], d4))
    return proper | touch


def _point_seg_dist(px, py, a, b):
    ab = b - a
    denom = float(ab @ ab)
    t = np.clip(((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom, 0.0, 1.0)
    return np.hypot(px - (a[0] + t * ab[0]), py - (a[1] + t * ab[1]))


def _near_boundary(poly, p1, p2, eps) -> np.ndarray:
    near = np.zeros(len(p1), dtype=bool)
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        near |= _point_seg_dist(p1[:, 0], p1[:, 1], a, b) <= eps
        near |= _point_seg_dist(p2[:, 0], p2[:, 1], a, b) <= eps
        ab = p2 - p1
        denom = np.einsum("ij,ij->i", ab, ab)
        for v in (a, b):
            with np.errstate(invalid="ignore", divide="ignore"):
                t = np.clip(((v[0] - p1[:, 0]) * ab[:, 0] + (v[1] - p1[:, 1]) * ab[:, 1])
                            / denom, 0.0, 1.0)
            t = np.where(denom > 0, t, 0.0)
            near |= np.hypot(v[0] - (p1[:, 0] + t * ab[:, 0]),
                             v[1] - (p1[:, 1] + t * ab[:, 1])) <= eps
    return near


def random_segments(obstacle: Obstacle, count: int, rng: np.random.Generator,
                    degenerate: bool = True) -> np.ndarray:
    """(count, 2, 2) segments around the obstacle; a share hug its boundary."""
    poly = np.asarray(obstacle.vertices, dtype=float)
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    span = np.maximum(hi - lo, 1.0)
    segs = rng.uniform(lo - span, hi + span, size=(count, 2, 2))
    if degenerate and count >= 8:
        k = count // 4
        n = len(poly)
        idx = rng.integers(0, n, size=k)
        a, b = poly[idx], poly[(idx + 1) % n]
        t = rng.uniform(0, 1, size=(k, 1))
        on_edge = a + t * (b - a)
        normal = np.stack([-(b - a)[:, 1], (b - a)[:, 0]], axis=1)
        normal /= np.linalg.norm(normal, axis=1, keepdims=True)
        offset = rng.choice([0.0, 0.5 * EPS, 2 * EPS, 1e-6, -0.5 * EPS], size=(k, 1))
        start = on_edge + offset * normal
        kind = rng.integers(0, 3, size=k)
        far = rng.uniform(lo - span, hi + span, size=(k, 2))
        along = start + (b - a) * rng.uniform(-0.5, 0.5, size=(k, 1))
        end = np.where(kind[:, None] == 0, far, np.where(kind[:, None] == 1, along, start))
        segs[:k, 0], segs[:k, 1] = start, end
    return segs


def polygon_containment_oracle(obstacle: Obstacle | None, samples: int = 10_000,
                               seed: int = 0, degenerate: bool = True,
                               density: int = 64, eps: float = EPS) -> OracleReport:
    """Compare `segment_blocked` with sampling + ray casting + exact edge tests.

    A segment is blocked for the oracle when a sample point along it lies in
    the polygon (even-odd ray cast), when it meets an edge (orientation signs)
    or when it passes within ``eps`` of the boundary.
    """
    report = OracleReport("polygon-containment")
    if obstacle is None:
        return report
    rng = np.random.default_rng(seed)
    segs = random_segments(obstacle, samples, rng, degenerate)
    poly = np.asarray(obstacle.vertices, dtype=float)
    p1, p2 = segs[:, 0], segs[:, 1]
    ts = np.linspace(0.0, 1.0, density)
    pts = p1[:, None, :] + ts[None, :, None] * (p2 - p1)[:, None, :]
    inside = _raycast(poly, pts).any(axis=1)
    crossing = np.zeros(len(segs), dtype=bool)
    for i in range(len(poly)):
        crossing |= _segments_intersect(p1, p2, poly[i], poly[(i + 1) % len(poly)])
    expected = inside | crossing | _near_boundary(poly, p1, p2, eps)
    for i, (seg, want) in enumerate(zip(segs, expected)):
        got = segment_blocked(tuple(seg[0]), tuple(seg[1]), [obstacle])
        if got != bool(want):
            length = float(np.hypot(*(seg[1] - seg[0])))
            report.mismatches.append((length, seg.tolist(), got, bool(want)))
    report.instances = len(segs)
    return report


# -- broadcast enumeration -----------------------------------------------------------
def enumerate_broadcast(positions: Sequence[Sequence[float]], radio_range: float,
                        origin: int, t_max: float = 0.1, ttl: int = 64):
    """Replay the unique collision-free schedule without the event engine.

    Returns (delivered node set, transmitting nodes in order).
    """
    n = len(positions)
    pos = [tuple(map(float, p)) for p in positions]
    dist = [[math.dist(pos[i], pos[j]) for j in range(n)] for i in range(n)]
    nbrs = [[j for j in range(n) if j != i and dist[i][j] <= radio_range] for i in range(n)]
    linked = [set(x) for x in nbrs]

    def delay_us(d):
        d = min(d, radio_range)
        return int(round(t_max * (1 - d / radio_range) * 1e6))

    delivered = {origin}
    heard: dict[int, set[int]] = {}
    pending: dict[int, tuple[int, int, int]] = {}  # node -> (time, order, ttl)
    order = 0
    txs: list[int] = []
    queue: list[tuple[int, int, int, int]] = []

    def transmit(node: int, node_ttl: int, now: int):
        nonlocal order
        txs.append(node)
        for m in nbrs[node]:
            if m not in delivered:
                delivered.add(m)
                heard[m] = {node}
                if node_ttl > 0 and any(k not in heard[m] for k in nbrs[m]):
                    order += 1
                    pending[m] = (now + delay_us(dist[m][node]), order, node_ttl - 1)
                    heapq.heappush(queue, (pending[m][0], order, m, node_ttl - 1))
            else:
                heard.setdefault(m, set()).add(node)
                if m in pending and all(k in heard[m] or linked[k] & heard[m]
                                        for k in nbrs[m]):
                    del pending[m]

    transmit(origin, ttl, 0)
    while queue:
        t, o, node, node_ttl = heapq.heappop(queue)
        if pending.get(node, (None, None))[1] != o:
            continue  # suppressed
        del pending[node]
        transmit(node, node_ttl, t)
    return delivered, txs


def broadcast_enumeration_oracle(positions: Sequence[Sequence[float]], radio_range: float,
                                 t_max: float = 0.1, ttl: int = 64) -> OracleReport:
    """Compare the simulator against the enumerated schedule, from every origin."""
    report = OracleReport("broadcast-enumeration")
    net = AdhocNetwork([tuple(p) for p in positions], radio_range)
    params = BackoffParams(t_max, radio_range)
    for origin in range(len(positions)):
        want_rx, want_tx = enumerate_broadcast(positions, radio_range, origin, t_max, ttl)
        res = run_broadcast(net, f"n{origin}", ttl, params=params)
        got_rx = {int(k[1:]) for k in res.delivered}
        got_tx = [int(k[1:]) for k in res.forwarders]
        report.instances += 1
        if got_rx != want_rx or got_tx != want_tx:
            report.mismatches.append((len(positions), origin, sorted(got_rx), got_tx,
                                      sorted(want_rx), want_tx))
    return report


# -- log replay ----------------------------------------------------------------------
def log_replay_report(log_text: str, records: Sequence[DowntimeRecord],
                      protocol: str | None = None) -> OracleReport:
    report = OracleReport("downtime-replay", 1)
    replay = downtime_oracle(log_text, protocol)
    if replay != list(records):
        report.mismatches.append((len(replay), replay, list(records)))
    return report
