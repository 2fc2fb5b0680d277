"""Data-link model for a mobile node's wireless interfaces.

Each NIC walks Scanning -> Associating -> Configuring -> Up. Frames sent on an
Up NIC are acknowledged by the access point when the node is covered at the
AP-reception instant and when the ACK comes back; otherwise the sender sees
an ACK timeout. Loss is purely geometric.
"""
from __future__ import annotations

import enum
import itertools
from functools import partial
from dataclasses import dataclass, field
from typing import Callable

from .engine import Engine, Event, us
from .world import World, distance, position_at


class LinkError(RuntimeError):
    pass


class NicStatus(enum.Enum):
    DOWN = "down"
    SCANNING = "scanning"
    ASSOCIATING = "associating"
    CONFIGURING = "configuring"
    UP = "up"


@dataclass
class LinkParams:
    frame_tx_latency: float = field(default=0.002, metadata={"min": 0})
    ack_timeout: float = field(default=0.030, metadata={"min": 0})
    association_delay: float = field(default=0.5, metadata={"min": 0})
    address_config_delay: float = field(default=1.0, metadata={"min": 0})
    wired_rtt_to_proxy: float = field(default=0.020, metadata={"min": 0})
    internet_latency: float = field(default=0.005, metadata={"min": 0})
    scan_interval: float = field(default=0.5, metadata={"min": 0, "exclusive": True})
    beacon_loss_timeout: float = field(default=0.3, metadata={"min": 0, "exclusive": True})
    association_hold_timeout: float = field(default=60.0, metadata={"min": 0})

    def validate(self) -> None:
        if not self.ack_timeout > self.frame_tx_latency:
            raise ValueError("ack_timeout must exceed frame_tx_latency")


@dataclass
class Nic:
    index: int
    name: str
    state: NicStatus = NicStatus.SCANNING
    ap: str | None = None
    target: str | None = None  # AP being joined while associating
    address: str | None = None
    associations: int = 0
    lost_since: int | None = None
    _step: Event | None = field(default=None, repr=False)
    _scan: Event | None = field(default=None, repr=False)
    _check: Event | None = field(default=None, repr=False)

    @property
    def up(self) -> bool:
        return self.state is NicStatus.UP

    def check_invariants(self) -> None:
        has_ap = self.state in (NicStatus.CONFIGURING, NicStatus.UP)
        if has_ap != (self.ap is not None):
            raise AssertionError(f"{self.name}: ap={self.ap} in state {self.state}")
        if (self.state is NicStatus.UP) != (self.address is not None):
            raise AssertionError(f"{self.name}: address={self.address} in state {self.state}")


@dataclass
class Frame:
    id: int
    nic: Nic
    ap: str
    payload: object
    tx_time: int
    forwarded: bool
    acked: bool
    sink: object = None
    timeout_kind: str = "timeout"
    outcome: Event | None = None


class RadioLink:
    """All wireless interfaces of one mobile node.

    ``exclusive`` keeps the NICs on distinct access points (and so distinct
    WLANs), which is how a multihomed node uses its interfaces.
    """

    def __init__(self, engine: Engine, world: World, params: LinkParams,
                 nic_count: int = 2, node: str = "mn", exclusive: bool = True,
                 coverage=None):
        self.engine = engine
        self.world = world
        self.params = params
        self.node = node
        self.exclusive = exclusive
        self.coverage = coverage if coverage is not None else world.coverage()
        self.nics = [Nic(i, f"{node}.nic{i}") for i in range(nic_count)]
        self.on_up: list[Callable[[Nic], None]] = []
        self.on_down: list[Callable[[Nic], None]] = []
        self._frames: dict[int, dict[int, Frame]] = {n.index: {} for n in self.nics}
        self._frame_ids = itertools.count()
        self._lat = us(params.frame_tx_latency)
        self._ack_timeout = us(params.ack_timeout)
        self._aps = {ap.id: ap for ap in world.aps}

    # -- setup ----------------------------------------------------------
    def start(self) -> None:
        eng = self.engine
        for t, ap, entering in self.coverage.transitions():
            kind = "cover-enter" if entering else "cover-exit"
            eng.call_at(t, "world", kind, self._on_cover_change, ap=ap)
        for start, end in self.coverage.gaps():
            eng.call_at(start, "world", "gap-start")
            if end < 2 ** 62:
                eng.call_at(end, "world", "gap-end")
        for nic in self.nics:
            self._enter_scanning(nic)

    def wired_latency(self, ap_id: str) -> int:
        ap = self._aps[ap_id]
        one_way = ap.wired_latency
        if one_way is None:
            one_way = self.params.wired_rtt_to_proxy / 2
        return us(one_way)

    # -- state helpers --------------------------------------------------
    def _set_state(self, nic: Nic, state: NicStatus) -> None:
        nic.state = state
        fields = {"state": state.value}
        if (nic.ap or nic.target) is not None:
            fields["ap"] = nic.ap or nic.target
        if nic.address is not None:
            fields["addr"] = nic.address
        self.engine.note(nic.name, "nic", **fields)

    def _held(self, nic: Nic) -> set[str]:
        if not self.exclusive:
            return set()
        return {n.ap or n.target for n in self.nics
                if n is not nic and (n.ap or n.target) is not None}

    def _enter_scanning(self, nic: Nic) -> None:
        self._set_state(nic, NicStatus.SCANNING)
        self._scan_attempt(nic)

    def _scan_attempt(self, nic: Nic, event: Event | None = None) -> None:
        nic._scan = None
        if nic.state is not NicStatus.SCANNING:
            return
        now = self.engine.now
        held = self._held(nic)
        candidates = [ap for ap in self.coverage.covering(now) if ap not in held]
        if candidates:
            here = position_at(self.world.path, now / 1e6)
            best = min(candidates,
                       key=lambda a: (distance(here, self._aps[a].position), a))
            self.associate(nic, best)
        else:
            nic._scan = self.engine.call_in(us(self.params.scan_interval),
                                            nic.name, "scan", partial(self._scan_attempt, nic))

    # -- operations -----------------------------------------------------
    def associate(self, nic: Nic, ap_id: str) -> Event:
        """Start association; the returned event fires when the first step ends."""
        if nic.state not in (NicStatus.DOWN, NicStatus.SCANNING):
            raise LinkError(f"{nic.name}: associate in state {nic.state.value}")
        if not self.coverage.is_covered(ap_id, self.engine.now):
            raise LinkError(f"{nic.name}: {ap_id} does not cover the node")
        self.engine.cancel(nic._scan)
        nic._scan = None
        nic.target = ap_id
        self._set_state(nic, NicStatus.ASSOCIATING)
        nic._step = self.engine.call_in(us(self.params.association_delay), nic.name,
                                        "assoc-done", partial(self._assoc_done, nic),
                                        ap=ap_id)
        return nic._step

    def _assoc_done(self, nic: Nic, event: Event) -> None:
        nic.ap, nic.target = nic.target, None
        self._set_state(nic, NicStatus.CONFIGURING)
        nic._step = self.engine.call_in(us(self.params.address_config_delay), nic.name,
                                        "config-done", partial(self._config_done, nic),
                                        ap=nic.ap)

    def _config_done(self, nic: Nic, event: Event) -> None:
        nic._step = None
        nic.associations += 1
        wlan = self._aps[nic.ap].wlan
        nic.address = f"{wlan}/{nic.name}/{nic.associations}"
        nic.lost_since = None
        self._set_state(nic, NicStatus.UP)
        if not self.coverage.is_covered(nic.ap, self.engine.now):
            self._lost(nic)
        for cb in self.on_up:
            cb(nic)

    def link_down(self, nic: Nic) -> None:
        if nic.state in (NicStatus.DOWN, NicStatus.SCANNING):
            return
        was_up = nic.up
        self.engine.cancel(nic._step)
        self.engine.cancel(nic._check)
        nic._step = nic._check = None
        nic.ap = nic.target = None
        nic.address = None
        nic.lost_since = None
        pending = list(self._frames[nic.index].values())
        self._frames[nic.index].clear()
        self._set_state(nic, NicStatus.SCANNING)
        for frame in pending:
            self.engine.cancel(frame.outcome)
            frame.acked = False
            self.engine.note(nic.name, frame.timeout_kind, **frame.outcome.fields,
                             cause="link-down")
            frame.sink.resolved(frame, False)
        if was_up:
            for cb in self.on_down:
                cb(nic)
        self._scan_attempt(nic)

    def transmit(self, nic: Nic, payload, sink, fields: dict | None = None,
                 ack_kind: str = "ack", timeout_kind: str = "timeout") -> Frame:
        """Send ``payload`` on ``nic``.

        ``sink.forward(frame, arrival_us)`` is called at once when the AP will
        pass the frame upstream; ``sink.resolved(frame, acked)`` is called when
        the ACK or the timeout fires.
        """
        if not nic.up:
            raise LinkError(f"{nic.name}: transmit in state {nic.state.value}")
        now = self.engine.now
        rx = now + self._lat
        forwarded = self.coverage.is_covered(nic.ap, rx)
        acked = forwarded and self.coverage.is_covered(nic.ap, rx + self._lat)
        frame = Frame(next(self._frame_ids), nic, nic.ap, payload, now, forwarded, acked,
                      sink, timeout_kind)
        fields = dict(fields or {}, nic=nic.index)
        if forwarded:
            sink.forward(frame, rx + self.wired_latency(nic.ap))
        if acked:
            at, kind = now + 2 * self._lat, ack_kind
        else:
            at, kind = now + self._ack_timeout, timeout_kind
        frame.outcome = self.engine.call_at(at, nic.name, kind,
                                            partial(self._outcome, frame), **fields)
        self._frames[nic.index][frame.id] = frame
        return frame

    def _outcome(self, frame: Frame, event: Event) -> None:
        del self._frames[frame.nic.index][frame.id]
        frame.sink.resolved(frame, frame.acked)

    def in_flight(self, nic: Nic) -> int:
        return len(self._frames[nic.index])

    # -- coverage transitions -------------------------------------------
    def _on_cover_change(self, event: Event) -> None:
        ap = event.fields["ap"]
        entering = event.kind == "cover-enter"
        for nic in self.nics:
            if (nic.ap or nic.target) != ap:
                continue
            if entering:
                if nic.up and nic.lost_since is not None:
                    nic.lost_since = None
                    self.engine.cancel(nic._check)
                    nic._check = None
            elif nic.state in (NicStatus.ASSOCIATING, NicStatus.CONFIGURING):
                self.engine.cancel(nic._step)
                nic._step = None
                nic.ap = nic.target = None
                self._enter_scanning(nic)
            elif nic.up:
                self._lost(nic)

    def _lost(self, nic: Nic) -> None:
        nic.lost_since = self.engine.now
        self.engine.cancel(nic._check)
        nic._check = self.engine.call_in(us(self.params.beacon_loss_timeout), nic.name,
                                         "link-check", partial(self._link_check, nic))

    def _link_check(self, nic: Nic, event: Event) -> None:
        nic._check = None
        now = self.engine.now
        if not nic.up or self.coverage.is_covered(nic.ap, now):
            return
        # roam once an AP this NIC may join is audible; otherwise hold the association
        held = self._held(nic)
        others = [a for a in self.coverage.covering(now) if a != nic.ap and a not in held]
        if others or now - nic.lost_since >= us(self.params.association_hold_timeout):
            event.fields["verdict"] = "down"
            self.link_down(nic)
        else:
            event.fields["verdict"] = "hold"
            nic._check = self.engine.call_in(us(self.params.beacon_loss_timeout),
                                             nic.name, "link-check", partial(self._link_check, nic))
