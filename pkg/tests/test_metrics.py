from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from abpsim.engine import EventLog, LogEntry, us
from abpsim.metrics import (COVERAGE_GAP, HANDOVER, DowntimeRecord, LogParseError, aggregate,
                            bar_chart_data, check_disjoint, ci95_half_width, downtime_online,
                            downtime_oracle, read_run_csv, read_summary_csv, run_csv, summary_csv)


def _send(t, seq):
    return LogEntry(us(t), "mn", "send", {"flow": "mn", "seq": seq})


def _timeout(t, seq, sent):
    return LogEntry(us(t), "mn.nic0", "timeout", {"flow": "mn", "seq": seq, "sent": us(sent)})


def _deliver(t, seq):
    return LogEntry(us(t), "cn", "deliver", {"flow": "mn", "seq": seq})


def _both(entries, protocol="abps"):
    log = EventLog()
    for e in entries:
        log.append(e)
    online = downtime_online(entries, protocol)
    assert downtime_oracle(log.serialize(), protocol) == online
    return online


def test_single_timeout_then_successor():
    recs = _both([_send(10.0, 5), _timeout(10.004, 5, 10.0), _send(10.02, 6), _deliver(10.05, 6)])
    assert len(recs) == 1
    assert recs[0].duration == pytest.approx(0.05)
    assert recs[0].cause == HANDOVER and not recs[0].truncated


def test_no_failures_no_records():
    assert _both([_send(1, 0), _deliver(1.01, 0)]) == []
    assert downtime_oracle("") == []


def test_overlapping_failures_merge():
    recs = _both([_send(10.0, 1), _timeout(10.004, 1, 10.0), _send(10.02, 2),
                  _timeout(10.024, 2, 10.02), _deliver(12.5, 1)])
    assert len(recs) == 1 and recs[0].duration == pytest.approx(2.5)


def test_older_delivery_does_not_close():
    recs = _both([_timeout(10.004, 5, 10.0), _deliver(10.01, 4), _deliver(10.3, 5)])
    assert recs[0].end == us(10.3)


def test_probes_are_ignored():
    entries = [LogEntry(us(1), "mn.nic1", "probe-timeout", {"flow": "mn"}),
               LogEntry(us(2), "mn.nic1", "probe-ack", {"flow": "mn"})]
    assert _both(entries) == []


def test_open_record_truncated_at_end():
    entries = [_timeout(5.004, 3, 5.0), LogEntry(us(9), "sim", "end", {})]
    recs = _both(entries)
    assert recs[0].truncated and recs[0].end == us(9)


def test_gap_overlap_marks_cause():
    entries = [LogEntry(us(4), "world", "gap-start", {}), _timeout(5.004, 3, 5.0),
               LogEntry(us(7), "world", "gap-end", {}), _deliver(7.2, 3)]
    assert _both(entries)[0].cause == COVERAGE_GAP


def test_malformed_log_names_line():
    text = "time_us,entity,kind,detail\n1,mn,send,flow=mn seq=0\nbogus line\n"
    with pytest.raises(LogParseError) as exc:
        downtime_oracle(text)
    assert exc.value.lineno == 3
    with pytest.raises(LogParseError, match="line 2"):
        downtime_oracle("time_us,entity,kind,detail\n5,mn.nic0,timeout,flow=mn seq=1\n")
    with pytest.raises(LogParseError, match="backwards"):
        downtime_oracle("5,a,b,\n3,a,b,\n")


def test_record_invariant():
    with pytest.raises(ValueError):
        DowntimeRecord("mn", 10, 5, HANDOVER, "abps", 0)


# -- aggregation --------------------------------------------------------------------
def _rec(d, i=0, cause=HANDOVER):
    return DowntimeRecord("mn", 0, us(d), cause, "abps", i)


def test_identical_runs_zero_width():
    s = aggregate([[_rec(0.05)], [_rec(0.05)], [_rec(0.05)]])
    assert s.handovers[0].ci95 == 0.0


def test_two_runs_mean():
    s = aggregate([[_rec(0.04)], [_rec(0.06)]])
    assert s.by_index()[0].mean == pytest.approx(0.05)
    assert s.runs == 2 and s.protocol == "abps"


def test_ci_needs_two_samples():
    assert ci95_half_width([0.1]) is None
    assert aggregate([[_rec(0.1)]]).handovers[0].ci95 is None
    with pytest.raises(ValueError):
        aggregate([])


def test_student_t_half_width():
    # t(0.975, 4) = 2.776445; sd of 1..5 is sqrt(2.5)
    assert ci95_half_width([1, 2, 3, 4, 5]) == pytest.approx(2.776445 * (2.5 ** 0.5) / 5 ** 0.5,
                                                             rel=1e-6)


def test_gap_cause_sticks_to_index():
    s = aggregate([[_rec(1, 0), _rec(20, 1, COVERAGE_GAP)], [_rec(1, 0), _rec(20, 1)]])
    assert s.by_index()[1].cause == COVERAGE_GAP


# -- output formats ------------------------------------------------------------------
def test_run_csv_round_trip():
    recs = [DowntimeRecord("mn", 10, 57_010, HANDOVER, "abps", 0),
            DowntimeRecord("mn", 90_000, 99_000, COVERAGE_GAP, "abps", 1, True)]
    text = run_csv(recs, 7)
    assert text.splitlines()[0] == ("protocol,run_seed,handover_index,cause,start_us,end_us,"
                                    "duration_s,truncated")
    assert text.splitlines()[1] == "abps,7,0,handover,10,57010,0.057000,0"
    assert read_run_csv(text) == [replace(r, flow_id="") for r in recs]


def test_summary_and_bars():
    a = aggregate([[_rec(0.04)], [_rec(0.06)]])
    b = replace(aggregate([[_rec(4.0)], [_rec(5.0)]]), protocol="lisp")
    rows = read_summary_csv(summary_csv(a))
    assert rows[0]["mean_s"] == "0.050000" and rows[-1]["handover_index"] == "all"
    bars = bar_chart_data([a, b]).splitlines()
    assert bars[0] == "# handover abps_mean abps_ci95 lisp_mean lisp_ci95"
    assert bars[1].split()[0] == "0" and bars[1].split()[3] == "4.500000"


def test_check_disjoint():
    assert check_disjoint([DowntimeRecord("mn", 0, 5, HANDOVER, "x", 0),
                           DowntimeRecord("mn", 5, 9, HANDOVER, "x", 1)])
    assert not check_disjoint([DowntimeRecord("mn", 0, 6, HANDOVER, "x", 0),
                               DowntimeRecord("mn", 5, 9, HANDOVER, "x", 1)])


# -- online vs oracle on synthetic traces ----------------------------------------------
@st.composite
def traces(draw):
    n = draw(st.integers(1, 30))
    entries = []
    for seq in range(n):
        sent = seq * 20_000
        entries.append(LogEntry(sent, "mn", "send", {"flow": "mn", "seq": seq}))
        if draw(st.booleans()):
            entries.append(LogEntry(sent + 4_000, "mn.nic0", "timeout",
                                    {"flow": "mn", "seq": seq, "sent": sent}))
        if draw(st.booleans()):
            late = draw(st.integers(5_000, 400_000))
            entries.append(LogEntry(sent + late, "cn", "deliver", {"flow": "mn", "seq": seq}))
    if draw(st.booleans()):
        entries.append(LogEntry(n * 20_000 + 500_000, "sim", "end", {}))
    entries.sort(key=lambda e: e.time_us)  # stable: same-time entries keep their order
    return entries


@settings(max_examples=300, deadline=None)
@given(traces())
def test_online_equals_oracle(entries):
    recs = _both(entries)
    assert check_disjoint(recs)
    assert [r.handover_index for r in recs] == list(range(len(recs)))
