"""Single-interface mobility client shared by the MIPv6 and LISP models.

The node keeps one active NIC. After every (re)association a protocol-specific
control procedure runs as a chain of timed steps; data flows only once the
procedure has completed, and a link loss aborts it so that it restarts from
the first step on the next association.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass
from functools import partial

from .engine import Engine, Event, us
from .radio import Frame, Nic, RadioLink


@dataclass
class _Pending:
    seq: int
    done: bool = False
    queued: bool = False
    in_flight: int = 0
    attempts: int = 0


class SingleInterfaceClient:
    protocol = "base"
    #: entity names that only infrastructure-dependent protocols talk to
    infrastructure: tuple[str, ...] = ()

    def __init__(self, engine: Engine, radio: RadioLink, params, flow_id: str = "mn"):
        if len(radio.nics) != 1:
            raise ValueError(f"{self.protocol} drives exactly one NIC")
        self.engine = engine
        self.radio = radio
        self.params = params
        self.flow_id = flow_id
        self.nic = radio.nics[0]
        self.ready = False
        self.next_seq = 0
        self.queue: list[int] = []
        self.pending: dict[int, _Pending] = {}
        self.delivered: list[int] = []
        self.retransmissions = 0
        self._step: Event | None = None
        self.stalled = False
        self._probe: Event | None = None
        self._probe_seq: int | None = None
        self._retry_us = us(params.retry_interval)
        self._internet_us = us(radio.params.internet_latency)
        radio.on_up.append(self._link_up)
        radio.on_down.append(self._link_down)

    # -- protocol hooks ------------------------------------------------------
    def procedure(self) -> list[tuple[str, str, int]]:
        """Control steps as (entity, kind, delay_us) run after association."""
        raise NotImplementedError

    def invalidate(self) -> None:
        """Forget routing state after a link loss."""

    def step_done(self, kind: str) -> None:
        """Update routing state after a control step."""

    def procedure_complete(self) -> None:
        """Called once the last control step has finished."""

    def extra_latency(self) -> int | None:
        """Added path latency in microseconds, or None while traffic is blocked."""
        raise NotImplementedError

    # -- procedure ----------------------------------------------------------
    def _link_up(self, nic: Nic) -> None:
        self.ready = False
        self.invalidate()
        self._run_steps(self.procedure(), 0)

    def _run_steps(self, steps, i: int, event: Event | None = None) -> None:
        if event is not None:
            self.step_done(event.kind)
        if i == len(steps):
            # a separate event so the last step is logged before the completion
            self._step = self.engine.call_in(0, self.radio.node, "handover-complete",
                                             self._complete, protocol=self.protocol)
            return
        entity, kind, delay = steps[i]
        self._step = self.engine.call_in(delay, entity, kind,
                                         partial(self._run_steps, steps, i + 1),
                                         wait_us=delay)

    def _complete(self, event: Event) -> None:
        self._step = None
        self.procedure_complete()
        self.ready = True
        self._resume()

    def _link_down(self, nic: Nic) -> None:
        if self._step is not None:
            self.engine.cancel(self._step)
            self._step = None
            self.engine.note(self.radio.node, "handover-abort", protocol=self.protocol)
        self.ready = False
        self.invalidate()

    # -- data path ------------------------------------------------------------
    # After a failed transmission the sender stalls: new datagrams queue up and
    # only the queue head is retried, once per retry interval, until it is
    # acknowledged or a fresh association completes.
    def _can_send(self) -> bool:
        return (self.ready and not self.stalled and self.nic.up
                and self.extra_latency() is not None)

    def _path_open(self) -> bool:
        return self.ready and self.nic.up and self.extra_latency() is not None

    def client_send(self, payload: bytes, event: Event | None = None) -> int:
        seq = self.next_seq
        self.next_seq += 1
        p = _Pending(seq)
        self.pending[seq] = p
        if self._can_send():
            self._transmit(p, log=False)
            kind = "send"
        else:
            self._enqueue(p)
            kind = "queue"
        fields = {"flow": self.flow_id, "seq": seq}
        if event is not None:
            event.kind = kind
            event.fields = fields
        else:
            self.engine.note(self.radio.node, kind, **fields)
        return seq

    def _transmit(self, p: _Pending, log: bool = True, retx: bool = False) -> None:
        p.in_flight += 1
        p.attempts += 1
        if retx:
            self.retransmissions += 1
        if log:
            self.engine.note(self.radio.node, "send", flow=self.flow_id, seq=p.seq,
                             **({"retx": p.attempts - 1} if retx else {}))
        self.radio.transmit(self.nic, p.seq, self,
                            {"flow": self.flow_id, "seq": p.seq, "sent": self.engine.now})

    def _enqueue(self, p: _Pending) -> None:
        if p.queued:
            return
        p.queued = True
        bisect.insort(self.queue, p.seq)

    def _drain(self) -> None:
        while self.queue and self._can_send():
            p = self.pending[self.queue.pop(0)]
            p.queued = False
            self._transmit(p, retx=p.attempts > 0)

    def _stall(self) -> None:
        if not self.stalled:
            self.stalled = True
            self._schedule_probe()

    def _schedule_probe(self) -> None:
        self.engine.cancel(self._probe)
        self._probe = self.engine.call_in(self._retry_us, self.radio.node, "retry",
                                          self._probe_head, flow=self.flow_id)

    def _probe_head(self, event: Event) -> None:
        self._probe = None
        if not self.queue or not self._path_open():
            return  # the next completed association resumes traffic
        p = self.pending[self.queue.pop(0)]
        p.queued = False
        self._probe_seq = p.seq
        event.fields["seq"] = p.seq
        self._transmit(p, retx=True)

    def _resume(self) -> None:
        self.stalled = False
        self.engine.cancel(self._probe)
        self._probe = None
        self._probe_seq = None
        self._drain()

    def forward(self, frame: Frame, arrival: int) -> None:
        extra = self.extra_latency()
        if extra is None:
            return  # no valid route state at the access network
        self.engine.call_at(arrival + self._internet_us + extra, "cn", "deliver",
                            self._deliver, flow=self.flow_id, seq=frame.payload)

    def resolved(self, frame: Frame, acked: bool) -> None:
        p = self.pending.get(frame.payload)
        probe = frame.payload == self._probe_seq
        if probe:
            self._probe_seq = None
        if p is None:
            return
        p.in_flight -= 1
        if acked:
            if not p.done:
                p.done = True
                del self.pending[p.seq]
            if probe and self.stalled:
                self._resume()
            return
        if p.done or p.in_flight:
            return
        self._enqueue(p)
        if probe:
            self._schedule_probe()
        else:
            self._stall()

    def _deliver(self, event: Event) -> None:
        self.delivered.append(event.fields["seq"])
