import pytest
from hypothesis import given, settings, strategies as st

from abpsim.engine import Engine, EventLog, LogEntry, RngStream, SchedulingError, to_seconds, us


def test_us_conversion():
    assert us(0.02) == 20_000
    assert us(1.5) == 1_500_000
    assert to_seconds(47_000) == pytest.approx(0.047)


def test_events_fire_in_time_then_schedule_order():
    eng = Engine()
    order = []
    for name, t in [("c", 20), ("a", 10), ("b", 10), ("d", 5)]:
        eng.call_at(t, name, "tick", lambda e: order.append(e.target))
    eng.run_until(100)
    assert order == ["d", "a", "b", "c"]
    assert eng.now == 100


def test_cancelled_event_never_fires_or_logs():
    eng = Engine()
    fired = []
    h = eng.call_at(10, "x", "tick", lambda e: fired.append(e))
    assert eng.cancel(h)
    assert not eng.cancel(h)
    eng.run_until(50)
    assert fired == [] and len(eng.log) == 0


def test_cancel_none_and_fired_handles():
    eng = Engine()
    h = eng.call_at(1, "x", "tick")
    eng.run_until(5)
    assert not eng.cancel(h)
    assert not eng.cancel(None)


def test_scheduling_in_the_past_raises():
    eng = Engine()
    eng.call_at(100, "x", "tick")
    eng.run_until(100)
    with pytest.raises(SchedulingError):
        eng.call_at(99, "x", "late")


def test_callback_can_schedule_at_same_time():
    eng = Engine()
    seen = []

    def first(e):
        eng.call_in(0, "y", "second", lambda e2: seen.append(e2.fire_at))

    eng.call_at(7, "x", "first", first)
    eng.run_until(7)
    assert seen == [7]


def test_run_until_leaves_later_events_pending():
    eng = Engine()
    eng.call_at(10, "x", "a")
    eng.call_at(30, "x", "b")
    eng.run_until(20)
    assert eng.now == 20 and eng.pending_count == 1
    eng.run_until(40)
    assert [e.kind for e in eng.log] == ["a", "b"]


def test_log_line_format_and_renaming():
    eng = Engine()

    def rename(e):
        e.kind = "queue"
        e.fields = {"flow": "mn", "seq": 3}

    eng.call_at(1_500_000, "mn", "send", rename)
    eng.note("sim", "run", protocol="abps")
    eng.run_until(2_000_000)
    lines = eng.log.serialize().splitlines()
    assert lines[0] == "time_us,entity,kind,detail"
    assert lines[1] == "0,sim,run,protocol=abps"
    assert lines[2] == "1500000,mn,queue,flow=mn seq=3"


def test_listeners_see_every_entry():
    eng = Engine()
    got = []
    eng.listeners.append(got.append)
    eng.call_at(1, "x", "a")
    eng.note("y", "b")
    eng.run_until(2)
    assert [e.kind for e in got] == ["b", "a"]
    assert got == list(eng.log)


def test_event_log_kinds_and_write(tmp_path):
    log = EventLog()
    log.append(LogEntry(1, "a", "x", {}))
    log.append(LogEntry(2, "b", "y", {"k": 1}))
    assert [e.entity for e in log.kinds("y")] == ["b"]
    path = tmp_path / "log.csv"
    log.write(path)
    assert path.read_text() == log.serialize()


def test_rng_streams_are_reproducible_and_independent():
    a = [RngStream(7, "traffic").generator().random() for _ in range(2)]
    assert a[0] == a[1]
    assert RngStream(7, "traffic").generator().random() != RngStream(7, "other").generator().random()
    assert RngStream(7, "traffic").generator().random() != RngStream(8, "traffic").generator().random()
    eng = Engine(3)
    assert eng.rng("s") is eng.rng("s")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10_000), st.booleans()), max_size=60))
def test_processed_times_never_decrease(spec):
    eng = Engine()
    handles = [eng.call_at(t, "n", "e") for t, _ in spec]
    for h, (_, cancel) in zip(handles, spec):
        if cancel:
            eng.cancel(h)
    eng.run_until(20_000)
    times = [e.time_us for e in eng.log]
    assert times == sorted(times)
    assert len(times) == sum(1 for _, c in spec if not c)
