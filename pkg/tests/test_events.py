import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evclip.errors import ConfigError, DataError
from evclip.events import (
    EventStream,
    aggregate_events,
    clamp_counts,
    event_frame,
    evt1_bytes,
    normalize_grid,
    parse_evt1,
    read_events_csv,
    read_evt1,
    write_events_csv,
    write_evt1,
)
from oracles import count_grid_loop


def stream(events, w=4, h=4):
    if not events:
        return EventStream.empty(w, h)
    x, y, t, p = zip(*events)
    return EventStream(x, y, t, p, w, h)


@st.composite
def streams(draw, max_events=60):
    w = draw(st.integers(1, 12))
    h = draw(st.integers(1, 12))
    n = draw(st.integers(0, max_events))
    xs = draw(st.lists(st.integers(0, w - 1), min_size=n, max_size=n))
    ys = draw(st.lists(st.integers(0, h - 1), min_size=n, max_size=n))
    ts = sorted(draw(st.lists(st.integers(0, 10**9), min_size=n, max_size=n)))
    ps = draw(st.lists(st.sampled_from([-1, 1]), min_size=n, max_size=n))
    return EventStream(xs, ys, ts, ps, w, h)


def test_empty_stream_gives_zero_grid():
    g = aggregate_events(EventStream.empty(4, 4))
    assert g.shape == (4, 4) and not g.any()


def test_opposite_polarities_both_count():
    g = aggregate_events(stream([(2, 3, 0, 1), (2, 3, 5, -1)]))
    expected = np.zeros((4, 4), dtype=np.int64)
    expected[3, 2] = 2
    np.testing.assert_array_equal(g, expected)


def test_three_distinct_pixels():
    g = aggregate_events(stream([(0, 0, 0, 1), (1, 2, 1, -1), (3, 3, 2, 1)]))
    assert g.sum() == 3 and (g == 1).sum() == 3


def test_out_of_bounds_is_rejected_with_coordinates():
    with pytest.raises(DataError, match=r"x=4"):
        aggregate_events(stream([(4, 0, 0, 1)]))


def test_validate_rejects_bad_time_and_polarity():
    with pytest.raises(DataError, match="non-decreasing"):
        stream([(0, 0, 5, 1), (0, 0, 4, 1)]).validate()
    with pytest.raises(DataError, match="polarity"):
        stream([(0, 0, 0, 0)]).validate()


def test_clamp_examples():
    g = np.array([[0, 1], [2, 1]])
    np.testing.assert_array_equal(clamp_counts(g, 10), g)
    assert clamp_counts(np.array([[37]]), 10)[0, 0] == 10
    for cap in (0, -3, 2.5):
        with pytest.raises(ConfigError):
            clamp_counts(g, cap)


def test_clamp_idempotent(rng):
    for _ in range(100):
        g = rng.integers(0, 40, size=(5, 7))
        c = int(rng.integers(1, 20))
        np.testing.assert_array_equal(clamp_counts(clamp_counts(g, c), c), clamp_counts(g, c))


def test_normalize_examples():
    assert not normalize_grid(np.zeros((3, 3))).any()
    f = normalize_grid(np.array([[0, 1], [1, 0]]))
    assert set(np.unique(f)) == {0.0, 0.5}
    assert normalize_grid(np.array([[9, 2], [0, 4]])).max() == pytest.approx(0.9)


@settings(max_examples=200, deadline=None)
@given(streams())
def test_frame_invariants(s):
    counts = count_grid_loop(s.x, s.y, s.width, s.height)
    np.testing.assert_array_equal(aggregate_events(s), counts)
    f = event_frame(s, cap=None)
    assert f.min() >= 0 and f.max() < 1
    np.testing.assert_array_equal(f == 0, counts == 0)


@settings(max_examples=100, deadline=None)
@given(streams(), st.randoms(use_true_random=False))
def test_order_invariance(s, r):
    perm = list(range(len(s)))
    r.shuffle(perm)
    shuffled = EventStream(s.x[perm], s.y[perm], np.sort(s.t), s.p[perm], s.width, s.height)
    np.testing.assert_array_equal(aggregate_events(shuffled), aggregate_events(s))


def test_clamped_max_is_cap_over_cap_plus_one():
    s = stream([(1, 1, t, 1) for t in range(25)] + [(0, 0, 30, -1)])
    for cap in (1, 3, 10):
        assert event_frame(s, cap).max() == cap / (cap + 1)


@settings(max_examples=100, deadline=None)
@given(streams())
def test_evt1_round_trip(s):
    back = parse_evt1(evt1_bytes(s))
    for f in ("x", "y", "t", "p"):
        np.testing.assert_array_equal(getattr(back, f), getattr(s, f))
    assert (back.width, back.height) == (s.width, s.height)
    assert len(evt1_bytes(s)) == 16 + 13 * len(s)


def test_evt1_layout_is_bit_exact(tmp_path):
    s = stream([(2, 3, 7, -1)], w=640, h=480)
    path = tmp_path / "a.evt"
    write_evt1(s, path)
    raw = path.read_bytes()
    assert raw[:4] == b"EVT1"
    assert raw[4:16] == bytes([1, 0, 0x80, 2, 0xE0, 1, 0, 0, 0, 0, 0, 0])
    assert raw[16:] == bytes([2, 0, 3, 0, 7, 0, 0, 0, 0, 0, 0, 0, 0xFF])
    assert read_evt1(path).t[0] == 7


def test_evt1_rejects_garbage():
    with pytest.raises(DataError):
        parse_evt1(b"NOPE" + bytes(12))
    with pytest.raises(DataError):
        parse_evt1(evt1_bytes(stream([(0, 0, 0, 1)]))[:-1])


def test_csv_mirror(tmp_path):
    s = stream([(0, 1, 2, 1), (3, 2, 9, -1)], w=5, h=3)
    write_events_csv(s, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "# width=5 height=3"
    back = read_events_csv(tmp_path / "e.csv")
    np.testing.assert_array_equal(back.t, s.t)
    np.testing.assert_array_equal(back.p, s.p)
