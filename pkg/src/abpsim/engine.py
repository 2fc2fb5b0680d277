"""Deterministic discrete-event core.

Time is kept as integer microseconds so that event ordering never depends on
floating point behaviour. Events with equal fire times are delivered in the
order they were scheduled.
"""
from __future__ import annotations

import hashlib
import heapq
import itertools
import random
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, NamedTuple

US_PER_SECOND = 1_000_000


def us(seconds: float) -> int:
    """Convert seconds to integer microseconds (round half to even)."""
    return int(round(seconds * US_PER_SECOND))


def to_seconds(time_us: int) -> float:
    return time_us / US_PER_SECOND


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current clock."""


class Event:
    __slots__ = ("fire_at", "seq", "target", "kind", "fields", "callback",
                 "cancelled", "fired")

    def __init__(self, fire_at: int, target: str, kind: str,
                 callback: Callable[["Event"], None] | None = None,
                 fields: dict | None = None):
        if fire_at < 0:
            raise SchedulingError(f"negative fire time {fire_at}")
        self.fire_at = int(fire_at)
        self.seq = -1
        self.target = target
        self.kind = kind
        self.fields = fields if fields is not None else {}
        self.callback = callback
        self.cancelled = False
        self.fired = False

    @property
    def pending(self) -> bool:
        return self.seq >= 0 and not self.cancelled and not self.fired

    def __lt__(self, other: "Event") -> bool:
        return (self.fire_at, self.seq) < (other.fire_at, other.seq)

    def __repr__(self) -> str:
        return (f"Event(t={self.fire_at}, seq={self.seq}, "
                f"{self.target}/{self.kind})")


class LogEntry(NamedTuple):
    time_us: int
    entity: str
    kind: str
    fields: dict

    def detail(self) -> str:
        return " ".join(f"{k}={v}" for k, v in self.fields.items())

    def to_line(self) -> str:
        return f"{self.time_us},{self.entity},{self.kind},{self.detail()}"


class EventLog:
    """Append-only record of processed events.

    Serializes to newline-delimited ``time_us,entity,kind,detail`` lines,
    where ``detail`` is a space separated list of ``key=value`` pairs.
    """

    header = "time_us,entity,kind,detail"

    def __init__(self) -> None:
        self.entries: list[LogEntry] = []

    def append(self, entry: LogEntry) -> None:
        self.entries.append(entry)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[LogEntry]:
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def kinds(self, *kinds: str) -> list[LogEntry]:
        wanted = set(kinds)
        return [e for e in self.entries if e.kind in wanted]

    def lines(self) -> Iterable[str]:
        yield self.header
        for e in self.entries:
            yield e.to_line()

    def serialize(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in self.lines():
                fh.write(line)
                fh.write("\n")


@dataclass(frozen=True)
class RngStream:
    """Identifies an independent pseudo-random stream.

    The generator is seeded from a SHA-256 digest of ``(seed, stream_id)``, so
    the draws are identical across runs and platforms and adding a stream never
    perturbs another.
    """

    seed: int
    stream_id: str

    def generator(self) -> random.Random:
        digest = hashlib.sha256(f"{self.seed}:{self.stream_id}".encode()).digest()
        return random.Random(int.from_bytes(digest[:8], "big"))


class Engine:
    """Single-threaded event loop with a virtual microsecond clock."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.now = 0
        self.log = EventLog()
        self.listeners: list[Callable[[LogEntry], None]] = []
        self._queue: list[tuple[int, int, Event]] = []
        self._counter = itertools.count()
        self._streams: dict[str, random.Random] = {}

    # -- scheduling -----------------------------------------------------
    def schedule(self, event: Event) -> Event:
        """Enqueue ``event``; the returned handle can be passed to `cancel`."""
        if event.fire_at < self.now:
            raise SchedulingError(
                f"{event.target}/{event.kind} scheduled at {event.fire_at} us, "
                f"clock is {self.now} us")
        if event.seq >= 0:
            raise SchedulingError(f"{event!r} already scheduled")
        event.seq = next(self._counter)
        heapq.heappush(self._queue, (event.fire_at, event.seq, event))
        return event

    def call_at(self, fire_at: int, target: str, kind: str,
                callback: Callable[[Event], None] | None = None,
                **fields) -> Event:
        return self.schedule(Event(fire_at, target, kind, callback, fields))

    def call_in(self, delay_us: int, target: str, kind: str,
                callback: Callable[[Event], None] | None = None,
                **fields) -> Event:
        return self.schedule(Event(self.now + delay_us, target, kind, callback, fields))

    def cancel(self, handle: Event | None) -> bool:
        if handle is None or not handle.pending:
            return False
        handle.cancelled = True
        return True

    # -- logging --------------------------------------------------------
    def note(self, entity: str, kind: str, **fields) -> None:
        """Append a trace record at the current time without an event."""
        self._emit(LogEntry(self.now, entity, kind, fields))

    def _emit(self, entry: LogEntry) -> None:
        self.log.append(entry)
        for listener in self.listeners:
            listener(entry)

    # -- randomness -----------------------------------------------------
    def rng(self, stream_id: str) -> random.Random:
        gen = self._streams.get(stream_id)
        if gen is None:
            gen = RngStream(self.seed, stream_id).generator()
            self._streams[stream_id] = gen
        return gen

    # -- run loop -------------------------------------------------------
    @property
    def pending_count(self) -> int:
        return sum(1 for _, _, e in self._queue if e.pending)

    def run_until(self, end: int) -> EventLog:
        queue = self._queue
        while queue and queue[0][0] <= end:
            event = heapq.heappop(queue)[2]
            if event.cancelled:
                continue
            self.now = event.fire_at
            event.fired = True
            if event.callback is not None:
                event.callback(event)
            # handlers may rename their own event (e.g. "send" -> "queue")
            self._emit(LogEntry(event.fire_at, event.target, event.kind,
                                event.fields))
        if end > self.now:
            self.now = end
        return self.log
