"""Priority-based multihop broadcast and greedy relaying toward a gateway.

On first reception a node waits ``t_max * (1 - d / R)`` before relaying, where
``d`` is its distance from the transmitter, so the farthest receivers relay
first. Overhearing a duplicate cancels the pending relay once every neighbour
is already within reach of a heard transmitter. Nodes never relay to nobody:
a node whose only neighbours are transmitters it heard stays silent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Mapping, Sequence

from .engine import Engine, Event, us
from .world import Obstacle, Point, distance, segment_blocked


@dataclass(frozen=True)
class Circle:
    center: Point
    radius: float

    def contains(self, p) -> bool:
        return distance(p, self.center) <= self.radius

    def inflate(self, margin: float) -> "Circle":
        return Circle(self.center, self.radius + margin)


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, p) -> bool:
        return self.x0 <= p[0] <= self.x1 and self.y0 <= p[1] <= self.y1

    def inflate(self, margin: float) -> "Rect":
        return Rect(self.x0 - margin, self.y0 - margin, self.x1 + margin, self.y1 + margin)


@dataclass(frozen=True)
class BroadcastMessage:
    msg_id: str
    origin: Point
    ttl: int
    area: Circle | Rect | None = None
    payload_len: int = 0

    def __post_init__(self):
        if self.ttl < 0:
            raise ValueError("ttl must be >= 0")

    def relayed(self) -> "BroadcastMessage":
        return BroadcastMessage(self.msg_id, self.origin, self.ttl - 1, self.area,
                                self.payload_len)


@dataclass
class BackoffParams:
    t_max: float = field(default=0.100, metadata={"min": 0, "exclusive": True})
    nominal_range: float = field(default=100.0, metadata={"min": 0, "exclusive": True})

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.t_max > 0:
            raise ValueError("t_max must be > 0")
        if not self.nominal_range > 0:
            raise ValueError("nominal_range must be > 0")


def forward_delay(d: float, params: BackoffParams) -> float:
    """Farther receivers wait less; beyond the nominal range the wait is zero."""
    if d < 0:
        raise ValueError("distance must be >= 0")
    if d >= params.nominal_range:
        return 0.0
    return params.t_max * (1.0 - d / params.nominal_range)


class AdhocNetwork:
    """Static nodes with a symmetric disc-plus-occlusion link relation."""

    def __init__(self, positions: Mapping[str, Sequence[float]] | Sequence[Sequence[float]],
                 radio_range: float, obstacles: Sequence[Obstacle] = ()):
        if not isinstance(positions, Mapping):
            positions = {f"n{i}": p for i, p in enumerate(positions)}
        self.positions = {k: Point(*map(float, v)) for k, v in positions.items()}
        self.radio_range = radio_range
        self.obstacles = tuple(obstacles)
        ids = list(self.positions)
        self._nbrs: dict[str, list[str]] = {k: [] for k in ids}
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                if self._link(a, b):
                    self._nbrs[a].append(b)
                    self._nbrs[b].append(a)

    def _link(self, a: str, b: str) -> bool:
        pa, pb = self.positions[a], self.positions[b]
        return (distance(pa, pb) <= self.radio_range
                and not segment_blocked(pa, pb, self.obstacles))

    @property
    def nodes(self) -> list[str]:
        return list(self.positions)

    def neighbors(self, node: str) -> list[str]:
        return self._nbrs[node]

    def linked(self, a: str, b: str) -> bool:
        return b in self._nbrs[a]

    def connected(self) -> bool:
        nodes = self.nodes
        if not nodes:
            return True
        seen, stack = {nodes[0]}, [nodes[0]]
        while stack:
            for n in self._nbrs[stack.pop()]:
                if n not in seen:
                    seen.add(n)
                    stack.append(n)
        return len(seen) == len(nodes)


@dataclass
class _NodeState:
    heard: list[str] = field(default_factory=list)
    pending: Event | None = None
    transmitted: bool = False


@dataclass
class BroadcastResult:
    delivered: dict[str, int]  # node -> first reception time (us)
    transmissions: list[tuple[int, str]]  # (time us, node), origin included
    suppressed: list[str]

    @property
    def forwarders(self) -> list[str]:
        return [n for _, n in self.transmissions]


class PriorityBroadcast:
    """Runs one or more broadcasts over an `AdhocNetwork`."""

    def __init__(self, network: AdhocNetwork, params: BackoffParams | None = None,
                 engine: Engine | None = None):
        self.net = network
        self.params = params or BackoffParams(nominal_range=network.radio_range)
        self.engine = engine or Engine()
        self._state: dict[tuple[str, str], _NodeState] = {}
        self._results: dict[str, BroadcastResult] = {}

    def broadcast(self, origin: str, msg: BroadcastMessage, at: float = 0.0) -> None:
        self._results[msg.msg_id] = BroadcastResult({}, [], [])
        self.engine.call_at(us(at), origin, "bcast-origin",
                            partial(self._originate, origin, msg), msg=msg.msg_id)

    def _originate(self, origin: str, msg: BroadcastMessage, event: Event) -> None:
        st = self._st(origin, msg.msg_id)
        self._results[msg.msg_id].delivered[origin] = self.engine.now
        st.transmitted = True
        self._transmit(origin, msg)

    def _st(self, node: str, msg_id: str) -> _NodeState:
        key = (node, msg_id)
        st = self._state.get(key)
        if st is None:
            st = self._state[key] = _NodeState()
        return st

    def _transmit(self, node: str, msg: BroadcastMessage) -> None:
        res = self._results[msg.msg_id]
        res.transmissions.append((self.engine.now, node))
        self.engine.note(node, "bcast-tx", msg=msg.msg_id, ttl=msg.ttl)
        # propagation is instantaneous at this scale and collision free
        for n in self.net.neighbors(node):
            self.on_broadcast_receive(n, msg, node)

    def _covered(self, node: str, heard: list[str]) -> bool:
        for n in self.net.neighbors(node):
            if n in heard:
                continue
            if not any(self.net.linked(h, n) for h in heard):
                return False
        return True

    def on_broadcast_receive(self, node: str, msg: BroadcastMessage, sender: str) -> None:
        st = self._st(node, msg.msg_id)
        res = self._results[msg.msg_id]
        if node in res.delivered:
            if sender not in st.heard:
                st.heard.append(sender)
            if st.pending is not None and self._covered(node, st.heard):
                self.engine.cancel(st.pending)
                st.pending = None
                res.suppressed.append(node)
                self.engine.note(node, "bcast-suppress", msg=msg.msg_id, by=sender)
            return
        st.heard.append(sender)
        res.delivered[node] = self.engine.now
        self.engine.note(node, "bcast-rx", msg=msg.msg_id, src=sender, ttl=msg.ttl)
        pos = self.net.positions[node]
        if msg.ttl <= 0:
            return
        if msg.area is not None and not msg.area.contains(pos):
            return
        if all(n in st.heard for n in self.net.neighbors(node)):
            return  # nobody new to reach
        d = distance(pos, self.net.positions[sender])
        delay = us(forward_delay(d, self.params))
        st.pending = self.engine.call_in(delay, node, "bcast-fwd",
                                         partial(self._relay, node, msg), msg=msg.msg_id)

    def _relay(self, node: str, msg: BroadcastMessage, event: Event) -> None:
        st = self._st(node, msg.msg_id)
        st.pending = None
        st.transmitted = True
        self._transmit(node, msg.relayed())

    def run(self, until: float | None = None) -> dict[str, BroadcastResult]:
        end = us(until) if until is not None else 2 ** 62
        self.engine.run_until(end)
        return self._results

    def result(self, msg_id: str) -> BroadcastResult:
        return self._results[msg_id]


def run_broadcast(network: AdhocNetwork, origin: str, ttl: int = 64,
                  area=None, params: BackoffParams | None = None) -> BroadcastResult:
    sim = PriorityBroadcast(network, params)
    msg = BroadcastMessage("m0", network.positions[origin], ttl, area)
    sim.broadcast(origin, msg)
    sim.run()
    return sim.result("m0")


def naive_flood_transmissions(network: AdhocNetwork, origin: str) -> int:
    """Transmissions when every node relays every new message once."""
    seen, stack = {origin}, [origin]
    while stack:
        for n in network.neighbors(stack.pop()):
            if n not in seen:
                seen.add(n)
                stack.append(n)
    return len(seen)


# -- greedy geographic relay ------------------------------------------------------
def greedy_relay_to_gateway(node_position: Sequence[float],
                            neighbors: Mapping[str, Sequence[float]],
                            gateway_position: Sequence[float]) -> str | None:
    """Neighbour strictly closer to the gateway, closest first; None at a local minimum."""
    own = distance(node_position, gateway_position)
    best, best_d = None, own
    for nid, pos in neighbors.items():
        d = distance(pos, gateway_position)
        if d < best_d or (d == best_d and best is not None and nid < best):
            best, best_d = nid, d
    return best


def greedy_route(network: AdhocNetwork, source: str, gateway: str,
                 engine: Engine | None = None) -> list[str] | None:
    """Node sequence from ``source`` to ``gateway`` (inclusive), or None."""
    target = network.positions[gateway]
    route = [source]
    node = source
    while node != gateway:
        nbrs = {n: network.positions[n] for n in network.neighbors(node)}
        nxt = greedy_relay_to_gateway(network.positions[node], nbrs, target)
        if nxt is None:
            if engine is not None:
                engine.note(node, "relay-noroute", gateway=gateway)
            return None
        if engine is not None:
            engine.note(node, "relay", to=nxt, gateway=gateway)
        route.append(nxt)
        node = nxt
    return route


def relay_along(route: Sequence[str], datagram, engine: Engine | None = None):
    """Carry ``datagram`` hop by hop along ``route``, recording each relay.

    Works with any datagram exposing ``restamp(locator, hop)``; the locator
    becomes the last relay's, as seen by whoever receives it next.
    """
    for prev, hop in zip(route, route[1:]):
        datagram = datagram.restamp(f"adhoc/{prev}", hop)
        if engine is not None:
            engine.note(prev, "relay", to=hop)
    return datagram
