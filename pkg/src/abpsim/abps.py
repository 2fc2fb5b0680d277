"""Always Best Packet Switching: proxy client, proxy server and NIC selection.

The proxy client on the mobile node signs every datagram, sends each one on
the interface the QoS monitor currently ranks best, and retransmits on a
failed ACK through a freshly selected interface. The proxy server identifies
the sender from the authenticator alone (never from the source address),
drops duplicates and relays to the correspondent node on the client's behalf.
"""
from __future__ import annotations

import bisect
import hashlib
import hmac
import struct
from collections import deque
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Iterable

from .engine import Engine, Event, us
from .radio import Frame, LinkParams, Nic, RadioLink

Signer = Callable[[bytes, bytes], bytes]

UP, DOWN = "up", "down"


@dataclass
class AbpsParams:
    retry_interval: float = field(default=0.020, metadata={"min": 0, "exclusive": True})
    keepalive_interval: float = field(default=0.100, metadata={"min": 0, "exclusive": True})
    failure_threshold: int = field(default=3, metadata={"min": 1})
    window: int = field(default=1024, metadata={"min": 1})
    ewma_alpha: float = field(default=0.125, metadata={"min": 0, "max": 1})
    key: str = "736d6172742d7368697265"  # hex; shared by client and proxy server

    def validate(self) -> None:
        bytes.fromhex(self.key)


@dataclass(frozen=True)
class Datagram:
    flow_id: str
    seq: int
    direction: str = UP
    payload: bytes = b""
    src_locator: str | None = None
    auth_tag: bytes = b""
    hop_trace: tuple[str, ...] = ()

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    def restamp(self, locator: str, hop: str | None = None) -> "Datagram":
        trace = self.hop_trace + (hop,) if hop else self.hop_trace
        return Datagram(self.flow_id, self.seq, self.direction, self.payload, locator,
                        self.auth_tag, trace)


def hmac_sha256_128(key: bytes, message: bytes) -> bytes:
    """Default authenticator: HMAC-SHA256 truncated to 16 bytes."""
    return hmac.new(key, message, hashlib.sha256).digest()[:16]


def _auth_message(d: Datagram) -> bytes:
    # locator and hop trace are deliberately excluded
    flow = d.flow_id.encode()
    return (struct.pack(">H", len(flow)) + flow + struct.pack(">q", d.seq)
            + d.direction.encode() + hashlib.sha256(d.payload).digest())


def sign(datagram: Datagram, key: bytes, signer: Signer = hmac_sha256_128) -> bytes:
    return signer(key, _auth_message(datagram))


def verify(tag: bytes, datagram: Datagram, key: bytes,
           signer: Signer = hmac_sha256_128) -> bool:
    return hmac.compare_digest(tag, sign(datagram, key, signer))


def signed(datagram: Datagram, key: bytes, signer: Signer = hmac_sha256_128) -> Datagram:
    return replace(datagram, auth_tag=sign(datagram, key, signer))


# -- cross-layer monitor -----------------------------------------------------
@dataclass
class NicStats:
    up: bool = False
    last_ack_at: int | None = None
    consecutive_failures: int = 0
    ewma_rtt: float | None = None


class QosMonitor:
    """Per-interface statistics fed by link-layer ACK outcomes."""

    def __init__(self, nic_ids: Iterable[int], failure_threshold: int = 3,
                 alpha: float = 0.125):
        self.failure_threshold = failure_threshold
        self.alpha = alpha
        self.stats: dict[int, NicStats] = {i: NicStats() for i in nic_ids}

    def usable(self, nic_id: int) -> bool:
        s = self.stats[nic_id]
        return s.up and s.consecutive_failures < self.failure_threshold

    def set_up(self, nic_id: int, up: bool) -> None:
        # a new association starts with fresh statistics
        self.stats[nic_id] = NicStats(up=up)

    def record_ack(self, nic_id: int, now: int, rtt: float) -> None:
        s = self.stats[nic_id]
        s.last_ack_at = now
        s.consecutive_failures = 0
        s.ewma_rtt = rtt if s.ewma_rtt is None else (1 - self.alpha) * s.ewma_rtt + self.alpha * rtt

    def record_failure(self, nic_id: int) -> None:
        self.stats[nic_id].consecutive_failures += 1


def select_nic(monitor: QosMonitor, current: int | None = None) -> int | None:
    """Pick the interface for the next datagram, or None if none is usable.

    Among usable NICs, fewer consecutive failures wins, then the most recent
    ACK, then the lower smoothed RTT, then the NIC already carrying traffic,
    then the lower id.
    """
    best, best_key = None, None
    for nic_id, s in monitor.stats.items():
        if not monitor.usable(nic_id):
            continue
        key = (s.consecutive_failures,
               -(s.last_ack_at if s.last_ack_at is not None else -1),
               s.ewma_rtt if s.ewma_rtt is not None else float("inf"),
               nic_id != current,
               nic_id)
        if best_key is None or key < best_key:
            best, best_key = nic_id, key
    return best


# -- proxy server ------------------------------------------------------------
@dataclass
class FlowState:
    key: bytes
    correspondent: str = "cn"
    highest: dict[str, int] = field(default_factory=dict)
    recent: dict[str, set[int]] = field(default_factory=dict)


class ProxyServer:
    """Fixed-host half of the proxy pair."""

    def __init__(self, flows: dict[str, bytes] | None = None, window: int = 1024,
                 signer: Signer = hmac_sha256_128, name: str = "proxy"):
        self.name = name
        self.window = window
        self.signer = signer
        self.flows: dict[str, FlowState] = {}
        self.relayed = 0
        self.dropped_dup = 0
        self.dropped_auth = 0
        for flow_id, key in (flows or {}).items():
            self.add_flow(flow_id, key)

    def add_flow(self, flow_id: str, key: bytes, correspondent: str = "cn") -> None:
        self.flows[flow_id] = FlowState(key, correspondent)

    def identify_sender(self, datagram: Datagram) -> str | None:
        flow = self.flows.get(datagram.flow_id)
        if flow is None or not datagram.auth_tag:
            return None
        if not verify(datagram.auth_tag, datagram, flow.key, self.signer):
            return None
        return datagram.flow_id

    def _seen(self, flow: FlowState, direction: str, seq: int) -> bool:
        highest = flow.highest.get(direction)
        if highest is None:
            return False
        if seq <= highest - self.window:
            return True  # too old to tell; treated as already delivered
        return seq in flow.recent[direction]

    def server_receive(self, datagram: Datagram) -> str:
        """Return ``"relay"``, ``"drop-dup"`` or ``"drop-auth"``."""
        flow_id = self.identify_sender(datagram)
        if flow_id is None:
            self.dropped_auth += 1
            return "drop-auth"
        flow = self.flows[flow_id]
        d, seq = datagram.direction, datagram.seq
        if self._seen(flow, d, seq):
            self.dropped_dup += 1
            return "drop-dup"
        recent = flow.recent.setdefault(d, set())
        recent.add(seq)
        highest = max(seq, flow.highest.get(d, seq))
        flow.highest[d] = highest
        if len(recent) > 2 * self.window:
            flow.recent[d] = {s for s in recent if s > highest - self.window}
        self.relayed += 1
        return "relay"


# -- proxy client ------------------------------------------------------------
@dataclass
class _Outgoing:
    datagram: Datagram
    sent_at: int  # first transmission
    attempts: int = 0
    in_flight: int = 0
    done: bool = False
    queued: bool = False
    retry: Event | None = None


class AbpsClient:
    """Mobile-node half of the proxy pair, bound to a `RadioLink`.

    Uplink datagrams flow mobile node -> AP -> proxy server -> correspondent.
    Trace kinds: ``send``/``queue`` at the client, ``ack``/``timeout`` (and
    ``probe-ack``/``probe-timeout``) on the NICs, ``relay``/``drop-dup``/
    ``drop-auth`` at the proxy, ``deliver`` at the correspondent.
    """

    def __init__(self, engine: Engine, radio: RadioLink, server: ProxyServer,
                 params: AbpsParams, flow_id: str = "mn", key: bytes | None = None,
                 signer: Signer = hmac_sha256_128):
        self.engine = engine
        self.radio = radio
        self.server = server
        self.params = params
        self.flow_id = flow_id
        self.key = bytes.fromhex(params.key) if key is None else key
        self.signer = signer
        self.monitor = QosMonitor([n.index for n in radio.nics], params.failure_threshold,
                                  params.ewma_alpha)
        self.current: int | None = None
        self.next_seq = 0
        self.queue: list[int] = []  # seqs, kept sorted
        self.outgoing: dict[int, _Outgoing] = {}
        self.delivered: list[int] = []
        self.retransmissions = 0
        self._retry_us = us(params.retry_interval)
        self._internet_us = us(radio.params.internet_latency)
        self._hol: Event | None = None
        self._keepalive: Event | None = None
        radio.on_up.append(self._nic_up)
        radio.on_down.append(self._nic_down)
        if flow_id not in server.flows:
            server.add_flow(flow_id, self.key)

    # -- traffic ----------------------------------------------------------
    def start_keepalive(self, first_at: int) -> None:
        self._keepalive = self.engine.call_at(first_at, "mn", "keepalive",
                                              self.keepalive_tick)

    def client_send(self, payload: bytes, event: Event | None = None) -> Datagram:
        d = signed(Datagram(self.flow_id, self.next_seq, UP, payload), self.key, self.signer)
        self.next_seq += 1
        out = _Outgoing(d, self.engine.now)
        self.outgoing[d.seq] = out
        nic = select_nic(self.monitor, self.current)
        if nic is None:
            self._enqueue(out)
            kind = "queue"
        else:
            self._transmit(out, nic, log=False)
            kind = "send"
        fields = {"flow": self.flow_id, "seq": d.seq}
        if nic is not None:
            fields["nic"] = nic
        if event is not None:
            event.kind = kind
            event.fields = fields
        else:
            self.engine.note("mn", kind, **fields)
        return d

    def _transmit(self, out: _Outgoing, nic_id: int, log: bool = True,
                  retx: bool = False) -> None:
        nic = self.radio.nics[nic_id]
        d = out.datagram.restamp(nic.address)
        out.attempts += 1
        out.in_flight += 1
        if nic_id != self.current:
            self.current = nic_id
        if retx:
            self.retransmissions += 1
        if log:
            fields = {"flow": self.flow_id, "seq": d.seq, "nic": nic_id}
            if retx:
                fields["retx"] = out.attempts - 1
            self.engine.note("mn", "send", **fields)
        self.radio.transmit(nic, d, self,
                            {"flow": self.flow_id, "seq": d.seq, "sent": self.engine.now})

    # -- link outcomes (RadioLink sink) ----------------------------------------
    def forward(self, frame: Frame, arrival: int) -> None:
        d = frame.payload
        if d.payload == b"" and d.seq < 0:
            return  # keepalive probes stop at the access point
        self.engine.call_at(arrival, self.server.name, "proxy-rx", self._server_arrival,
                            datagram=d.restamp(d.src_locator, frame.ap))

    def resolved(self, frame: Frame, acked: bool) -> None:
        nic_id = frame.nic.index
        now = self.engine.now
        if acked:
            self.monitor.record_ack(nic_id, now, (now - frame.tx_time) / 1e6)
        elif self.monitor.stats[nic_id].up:
            self.monitor.record_failure(nic_id)
        d = frame.payload
        if d.seq < 0:
            if acked:
                self._drain()
            return
        out = self.outgoing.get(d.seq)
        if out is None:
            return
        out.in_flight -= 1
        if out.done:
            return
        if acked:
            self._complete(out)
            self._drain()
            return
        if out.in_flight > 0 or out.queued or out.retry is not None:
            return
        choice = select_nic(self.monitor, self.current)
        if choice is None:
            self._enqueue(out)
        elif out.attempts == 1 and choice != nic_id:
            self._transmit(out, choice, retx=True)
        else:
            out.retry = self.engine.call_in(self._retry_us, "mn", "retry",
                                            partial(self._retry, out),
                                            flow=self.flow_id, seq=d.seq)

    def _retry(self, out: _Outgoing, event: Event) -> None:
        out.retry = None
        if out.done:
            return
        choice = select_nic(self.monitor, self.current)
        if choice is None:
            self._enqueue(out)
        else:
            self._transmit(out, choice, retx=True)

    def _complete(self, out: _Outgoing) -> None:
        out.done = True
        self.engine.cancel(out.retry)
        out.retry = None
        if out.queued:
            out.queued = False
            self.queue.remove(out.datagram.seq)
        del self.outgoing[out.datagram.seq]

    # -- queueing while no NIC is usable ---------------------------------------
    def _enqueue(self, out: _Outgoing) -> None:
        out.queued = True
        bisect.insort(self.queue, out.datagram.seq)
        if self._hol is None:
            self._hol = self.engine.call_in(self._retry_us, "mn", "hol-probe",
                                            self._hol_probe)

    def _drain(self) -> None:
        while self.queue:
            choice = select_nic(self.monitor, self.current)
            if choice is None:
                return
            out = self.outgoing[self.queue.pop(0)]
            out.queued = False
            self._transmit(out, choice, retx=out.attempts > 0)

    def _hol_probe(self, event: Event) -> None:
        """Retry the head of the queue on every Up NIC until one answers."""
        self._hol = None
        self._drain()
        if not self.queue:
            return
        head = self.outgoing[self.queue[0]]
        up = [n.index for n in self.radio.nics if n.up]
        event.fields = {"flow": self.flow_id, "seq": head.datagram.seq,
                        "nics": "+".join(map(str, up)) or "none"}
        for nic_id in up:
            self._transmit(head, nic_id, retx=head.attempts > 0)
        self._hol = self.engine.call_in(self._retry_us, "mn", "hol-probe", self._hol_probe)

    # -- keepalive ---------------------------------------------------------------
    def keepalive_tick(self, event: Event) -> None:
        up = [n for n in self.radio.nics if n.up]
        for nic in up:
            probe = signed(Datagram(self.flow_id, -1, UP, b"", nic.address),
                           self.key, self.signer)
            self.radio.transmit(nic, probe, self, {"flow": self.flow_id},
                                ack_kind="probe-ack", timeout_kind="probe-timeout")
        event.fields = {"nics": "+".join(str(n.index) for n in up) or "none"}
        self._keepalive = self.engine.call_in(us(self.params.keepalive_interval), "mn",
                                              "keepalive", self.keepalive_tick)

    # -- interface state ---------------------------------------------------------
    def _nic_up(self, nic: Nic) -> None:
        self.monitor.set_up(nic.index, True)
        self._drain()

    def _nic_down(self, nic: Nic) -> None:
        self.monitor.set_up(nic.index, False)
        if self.current == nic.index:
            self.current = None

    # -- proxy server side -------------------------------------------------------
    def _server_arrival(self, event: Event) -> None:
        d: Datagram = event.fields.pop("datagram")
        verdict = self.server.server_receive(d)
        event.kind = verdict
        event.fields = {"flow": d.flow_id, "seq": d.seq, "via": d.hop_trace[-1],
                        "loc": d.src_locator}
        if verdict == "relay":
            self.engine.call_in(self._internet_us, "cn", "deliver", self._deliver,
                                flow=d.flow_id, seq=d.seq)

    def _deliver(self, event: Event) -> None:
        self.delivered.append(event.fields["seq"])
