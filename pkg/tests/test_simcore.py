import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from ccaccel.simcore import CounterSet, Engine, RngStream, SimulationError, UnknownStream


def test_zero_delay_events_run_in_schedule_order(engine):
    seen = []
    for tag in "abc":
        engine.schedule(0, seen.append, tag)
    engine.run_until()
    assert seen == ["a", "b", "c"]


def test_clock_reads_fire_time_inside_callback(engine):
    times = []
    engine.schedule(5, lambda: times.append(engine.now))
    engine.schedule(12, lambda: times.append(engine.now))
    engine.run_until()
    assert times == [5, 12]


def test_empty_queue_returns_immediately(engine):
    assert engine.run_until() == {}
    assert engine.now == 0


def test_run_until_limit_leaves_later_events_pending(engine):
    seen = []
    engine.schedule(10, seen.append, 1)
    engine.schedule(20, seen.append, 2)
    engine.run_until(15)
    assert seen == [1] and engine.pending() == 1 and engine.peek_time() == 20
    engine.run_until()
    assert seen == [1, 2]


def test_callback_exception_names_event_and_time(engine):
    def boom():
        raise KeyError("x")
    engine.schedule(0, lambda: None)
    eid = engine.schedule(33, boom)
    with pytest.raises(SimulationError) as info:
        engine.run_until()
    assert info.value.event_id == eid and info.value.fire_time == 33
    assert isinstance(info.value.cause, KeyError)


def test_negative_delay_and_past_time_rejected(engine):
    with pytest.raises(ValueError):
        engine.schedule(-1, lambda: None)
    engine.schedule(10, lambda: None)
    engine.run_until()
    with pytest.raises(ValueError):
        engine.at(5, lambda: None)


def _random_trace(seed):
    eng = Engine(seed)
    rng = eng.register_stream("trace")
    out = []

    def ev(i):
        out.append((eng.now, i))
        if len(out) < 1000:
            eng.schedule(rng.below(50), ev, len(out))

    for i in range(10):
        eng.schedule(rng.below(100), ev, i)
    eng.run_until()
    return out


def test_same_seed_gives_identical_trace():
    assert _random_trace(3) == _random_trace(3)
    assert _random_trace(3) != _random_trace(4)


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=200))
def test_execution_order_is_fire_time_then_id(delays):
    eng = Engine(0)
    seen = []
    ids = [eng.schedule(d, lambda i=i: seen.append(i)) for i, d in enumerate(delays)]
    eng.run_until()
    expect = sorted(range(len(delays)), key=lambda i: (delays[i], ids[i]))
    assert seen == expect


def test_streams_are_independent_of_registration_order():
    a = Engine(11)
    x1 = a.register_stream("x")
    a.register_stream("y")
    b = Engine(11)
    b.register_stream("y")
    x2 = b.register_stream("x")
    assert [x1.draw() for _ in range(10)] == [x2.draw() for _ in range(10)]


def test_distinct_names_and_seeds_differ():
    d = lambda s, n: [RngStream(s, n).draw() for _ in range(4)]
    assert d(1, "a") != d(1, "b")
    assert d(1, "a") != d(2, "a")


def test_unknown_stream_raises(engine):
    with pytest.raises(UnknownStream):
        engine.stream("nope")
    engine.register_stream("ok")
    assert isinstance(engine.rng_draw("ok"), int)


def test_batch_matches_repeated_draw():
    a, b = RngStream(5, "s"), RngStream(5, "s")
    singles = [a.draw() for _ in range(5000)]
    assert b.batch(5000).tolist() == singles


def test_uniformity_chi_square_over_a_million_draws():
    s = RngStream(2024, "chi")
    top = (s.batch(10 ** 6) >> np.uint64(56)).astype(np.int64)
    counts = np.bincount(top, minlength=256)
    assert stats.chisquare(counts).pvalue > 0.01


@given(st.integers(1, 10 ** 12), st.integers(0, 2 ** 32))
def test_below_stays_in_range(n, seed):
    s = RngStream(seed, "below")
    assert all(0 <= s.below(n) < n for _ in range(20))


def test_counters_never_decrease():
    c = CounterSet()
    c.add("x", 3)
    with pytest.raises(ValueError):
        c.add("x", -1)
    assert c["x"] == 3 and c.get("missing") == 0 and "x" in c
    assert c.snapshot() == {"x": 3}
