"""Handover downtime measurement and aggregation.

Downtime runs from the first failed transmission of a data datagram to the
moment that datagram, or one with a higher sequence number, is delivered to
the correspondent node. Keepalive probes never count.

Two independent implementations exist: `DowntimeTracker` consumes log
entries as the simulation emits them, `downtime_oracle` re-parses a serialized
event log and recomputes the records by brute force. They must agree exactly.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from scipy import stats

from .engine import LogEntry, to_seconds

HANDOVER = "handover"
COVERAGE_GAP = "coverage_gap"
FOREVER = 2 ** 62

RUN_CSV_HEADER = ["protocol", "run_seed", "handover_index", "cause", "start_us",
                  "end_us", "duration_s", "truncated"]
SUMMARY_CSV_HEADER = ["protocol", "handover_index", "cause", "n", "mean_s", "ci95_s",
                      "min_s", "max_s"]


class LogParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def is_delivery(kind: str) -> bool:
    """Downtime stops at correspondent-side delivery, not at the proxy."""
    return kind == "deliver"


@dataclass(frozen=True)
class DowntimeRecord:
    flow_id: str
    start: int  # us, send time of the first failed transmission
    end: int  # us, delivery of that datagram or a successor
    cause: str
    protocol: str
    handover_index: int
    truncated: bool = False

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError("record ends before it starts")

    @property
    def duration(self) -> float:
        return to_seconds(self.end - self.start)


def _nearest_exit(exits: Sequence[int], start: int) -> int | None:
    """Ordinal of the coverage exit closest to ``start``; earlier wins a tie.

    Exits come from the geometry alone, so the same handover gets the same
    index in every run and for every protocol, even when a run sees no outage
    at some handover.
    """
    best = None
    for i, t in enumerate(exits):
        if best is None or abs(t - start) < abs(exits[best] - start):
            best = i
    return best


def _overlaps_gap(gaps: Sequence[tuple[int, int | None]], start: int, end: int) -> bool:
    for g0, g1 in gaps:
        g1 = FOREVER if g1 is None else g1
        if g0 < end and g1 > start:
            return True
    return False


@dataclass
class _FlowState:
    last_end: int = -1
    open_start: int | None = None
    open_seq: int | None = None
    count: int = 0


class DowntimeTracker:
    """Online downtime detector; attach ``tracker.feed`` as an engine listener."""

    def __init__(self, protocol: str = ""):
        self.protocol = protocol
        self.records: list[DowntimeRecord] = []
        self._flows: dict[str, _FlowState] = {}
        self._gaps: list[list] = []
        self._exits: list[int] = []
        self._last_time = 0
        self._finished = False

    def feed(self, entry: LogEntry) -> None:
        if self._finished:
            return
        t, _, kind, f = entry
        self._last_time = t
        if kind == "timeout":
            st = self._flows.setdefault(str(f["flow"]), _FlowState())
            sent, seq = int(f["sent"]), int(f["seq"])
            if sent < st.last_end:
                return  # already covered by the previous record
            if st.open_start is None:
                st.open_start, st.open_seq = sent, seq
            else:
                st.open_start = min(st.open_start, sent)
                st.open_seq = min(st.open_seq, seq)
        elif is_delivery(kind):
            flow = str(f["flow"])
            st = self._flows.get(flow)
            if st is not None and st.open_start is not None and int(f["seq"]) >= st.open_seq:
                self._close(flow, st, t, False)
        elif kind == "cover-exit":
            self._exits.append(t)
        elif kind == "gap-start":
            self._gaps.append([t, None])
        elif kind == "gap-end":
            self._gaps[-1][1] = t
        elif kind == "run" and not self.protocol:
            self.protocol = str(f.get("protocol", ""))
        elif kind == "end":
            self.finish(t)

    def _close(self, flow: str, st: _FlowState, t: int, truncated: bool) -> None:
        cause = COVERAGE_GAP if _overlaps_gap(self._gaps, st.open_start, t) else HANDOVER
        index = _nearest_exit(self._exits, st.open_start)
        self.records.append(DowntimeRecord(flow, st.open_start, t, cause, self.protocol,
                                           st.count if index is None else index, truncated))
        st.count += 1
        st.last_end = t
        st.open_start = st.open_seq = None

    def finish(self, end_time: int | None = None) -> list[DowntimeRecord]:
        if not self._finished:
            t = self._last_time if end_time is None else end_time
            for flow, st in self._flows.items():
                if st.open_start is not None:
                    self._close(flow, st, t, True)
            self._finished = True
        return sorted(self.records, key=lambda r: (r.flow_id, r.start))


def downtime_online(entries: Iterable[LogEntry], protocol: str = "") -> list[DowntimeRecord]:
    tracker = DowntimeTracker(protocol)
    for e in entries:
        tracker.feed(e)
    return tracker.finish()


# -- offline oracle -------------------------------------------------------------
def parse_log(text: str) -> list[tuple[int, int, str, str, dict[str, str]]]:
    """Parse a serialized event log into (lineno, time_us, entity, kind, fields)."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if lineno == 1 and line.startswith("time_us,"):
            continue
        parts = line.split(",", 3)
        if len(parts) != 4:
            raise LogParseError(lineno, f"expected 4 comma-separated columns: {line!r}")
        t, entity, kind, detail = parts
        try:
            time_us = int(t)
        except ValueError:
            raise LogParseError(lineno, f"bad time {t!r}") from None
        if time_us < 0:
            raise LogParseError(lineno, "negative time")
        if out and time_us < out[-1][1]:
            raise LogParseError(lineno, "time goes backwards")
        fields = {}
        for tok in detail.split():
            key, sep, value = tok.partition("=")
            if not sep or not key:
                raise LogParseError(lineno, f"bad detail token {tok!r}")
            fields[key] = value
        if not kind:
            raise LogParseError(lineno, "empty kind")
        out.append((lineno, time_us, entity, kind, fields))
    return out


def downtime_oracle(log_text: str, protocol: str | None = None) -> list[DowntimeRecord]:
    """Recompute downtime records from a serialized log by exhaustive search."""
    rows = parse_log(log_text)
    if protocol is None:
        protocol = next((r[4].get("protocol", "") for r in rows if r[3] == "run"), "")
    try:
        end_time = next(r[1] for r in rows if r[3] == "end")
    except StopIteration:
        end_time = rows[-1][1] if rows else 0
    gaps = []
    for i, r in enumerate(rows):
        if r[3] == "gap-start":
            stop = next((s[1] for s in rows[i + 1:] if s[3] == "gap-end"), None)
            gaps.append((r[1], stop))
    exits = [(i, r[1]) for i, r in enumerate(rows) if r[3] == "cover-exit"]
    failures, deliveries = [], []
    for i, r in enumerate(rows):
        lineno, t, _, kind, f = r
        try:
            if kind == "timeout":
                failures.append((i, int(f["sent"]), int(f["seq"]), f["flow"]))
            elif is_delivery(kind):
                deliveries.append((i, t, int(f["seq"]), f["flow"]))
        except (KeyError, ValueError) as exc:
            raise LogParseError(lineno, f"{kind} record has bad or missing field {exc}") from None
    # an "end" marker truncates the log for accounting purposes
    end_index = next((i for i, r in enumerate(rows) if r[3] == "end"), len(rows))

    flows = []
    for f in failures:
        if f[3] not in flows:
            flows.append(f[3])
    records = []
    for flow in flows:
        fl = [f for f in failures if f[3] == flow and f[0] < end_index]
        dl = [d for d in deliveries if d[3] == flow and d[0] < end_index]
        last_end = -1
        index = 0
        cursor = -1  # log position of the last closing delivery
        while True:
            opening = next((f for f in fl if f[0] > cursor and f[1] >= last_end), None)
            if opening is None:
                break
            closing = None
            for d in dl:
                if d[0] <= opening[0]:
                    continue
                members = [f for f in fl if opening[0] <= f[0] < d[0] and f[1] >= last_end]
                if d[2] >= min(f[2] for f in members):
                    closing = d
                    break
            if closing is None:
                members = [f for f in fl if f[0] >= opening[0] and f[1] >= last_end]
                stop, truncated, cursor = end_time, True, len(rows)
            else:
                stop, truncated, cursor = closing[1], False, closing[0]
            start = min(f[1] for f in members)
            cause = COVERAGE_GAP if _overlaps_gap(gaps, start, stop) else HANDOVER
            # only exits logged before the record closed are known at that point
            seen = [t for i, t in exits if i < min(cursor, end_index)]
            nearest = _nearest_exit(seen, start)
            records.append(DowntimeRecord(flow, start, stop, cause, protocol,
                                          index if nearest is None else nearest, truncated))
            index += 1
            last_end = stop
    return sorted(records, key=lambda r: (r.flow_id, r.start))


# -- aggregation ------------------------------------------------------------------
def ci95_half_width(samples: Sequence[float]) -> float | None:
    """Student-t 95% half-width; None for fewer than two samples."""
    n = len(samples)
    if n < 2:
        return None
    if all(x == samples[0] for x in samples):
        return 0.0  # the float mean of equal values may not be exact
    mean = math.fsum(samples) / n
    var = math.fsum((x - mean) ** 2 for x in samples) / (n - 1)
    return float(stats.t.ppf(0.975, n - 1)) * math.sqrt(var / n)


@dataclass
class HandoverStat:
    index: int
    cause: str
    samples: list[float]

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def mean(self) -> float:
        return sum(self.samples) / len(self.samples)

    @property
    def ci95(self) -> float | None:
        return ci95_half_width(self.samples)


@dataclass
class RunSummary:
    protocol: str
    handovers: list[HandoverStat] = field(default_factory=list)
    runs: int = 0

    @property
    def samples(self) -> list[float]:
        return [x for h in self.handovers for x in h.samples]

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def mean(self) -> float | None:
        s = self.samples
        return sum(s) / len(s) if s else None

    @property
    def ci95(self) -> float | None:
        return ci95_half_width(self.samples)

    def by_index(self) -> dict[int, HandoverStat]:
        return {h.index: h for h in self.handovers}


def aggregate(runs: Sequence[Sequence[DowntimeRecord]], protocol: str | None = None) -> RunSummary:
    """Per-handover-index mean and 95% interval across independent runs."""
    if not runs:
        raise ValueError("aggregate needs at least one run")
    if protocol is None:
        protocol = next((r.protocol for run in runs for r in run), "")
    by_index: dict[int, HandoverStat] = {}
    for run in runs:
        for r in run:
            h = by_index.setdefault(r.handover_index, HandoverStat(r.handover_index, r.cause, []))
            h.samples.append(r.duration)
            if r.cause == COVERAGE_GAP:
                h.cause = COVERAGE_GAP
    return RunSummary(protocol, [by_index[k] for k in sorted(by_index)], len(runs))


# -- CSV ----------------------------------------------------------------------------
def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def run_csv(records: Iterable[DowntimeRecord], seed: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_CSV_HEADER)
    for r in records:
        w.writerow([r.protocol, seed, r.handover_index, r.cause, r.start, r.end,
                    f"{r.duration:.6f}", int(r.truncated)])
    return buf.getvalue()


def read_run_csv(text: str) -> list[DowntimeRecord]:
    rows = csv.DictReader(io.StringIO(text))
    return [DowntimeRecord("", int(r["start_us"]), int(r["end_us"]), r["cause"],
                           r["protocol"], int(r["handover_index"]), r["truncated"] == "1")
            for r in rows]


def summary_csv(summary: RunSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_CSV_HEADER)
    for h in summary.handovers:
        w.writerow([summary.protocol, h.index, h.cause, h.n, _fmt(h.mean), _fmt(h.ci95),
                    _fmt(min(h.samples)), _fmt(max(h.samples))])
    w.writerow([summary.protocol, "all", "", summary.n, _fmt(summary.mean),
                _fmt(summary.ci95), _fmt(min(summary.samples, default=None)),
                _fmt(max(summary.samples, default=None))])
    return buf.getvalue()


def read_summary_csv(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))


def bar_chart_data(summaries: Sequence[RunSummary]) -> str:
    """Whitespace-separated columns for a grouped bar chart (gnuplot histogram).

    One row per handover index; for every protocol a mean and a ci95 column.
    """
    protocols = [s.protocol for s in summaries]
    header = ["# handover"] + [f"{p}_mean {p}_ci95" for p in protocols]
    lines = [" ".join(header)]
    indices = sorted({h.index for s in summaries for h in s.handovers})
    for i in indices:
        row = [str(i)]
        for s in summaries:
            h = s.by_index().get(i)
            if h is None:
                row += ["NaN", "NaN"]
            else:
                ci = h.ci95
                row += [f"{h.mean:.6f}", "0.000000" if ci is None else f"{ci:.6f}"]
        lines.append(" ".join(row))
    return "\n".join(lines) + "\n"


def check_disjoint(records: Sequence[DowntimeRecord]) -> bool:
    by_flow: dict[str, list[DowntimeRecord]] = {}
    for r in records:
        by_flow.setdefault(r.flow_id, []).append(r)
    for rs in by_flow.values():
        rs = sorted(rs, key=lambda r: r.start)
        if any(a.end > b.start for a, b in zip(rs, rs[1:])):
            return False
    return True
