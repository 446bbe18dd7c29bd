import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evflow.events import (
    DegenerateIntervalError,
    Event,
    EventError,
    EventStream,
    EventVolume,
    SortingError,
    count_image,
    normalize_timestamps,
    read_events,
    slice_stream,
    write_events,
)


def stream(ts, size=(4, 4)):
    n = len(ts)
    return EventStream(np.zeros(n, int), np.zeros(n, int), np.asarray(ts, float), np.ones(n, int), size)


def test_slice_half_open():
    vols = slice_stream(stream([0.01, 0.03, 0.06]), 0.05)
    assert [len(v) for v in vols] == [2, 1]
    assert (vols[0].t_start, vols[0].t_end) == (0.0, 0.05)


def test_slice_boundary_event_goes_to_later_volume():
    vols = slice_stream(stream([0.01, 0.05]), 0.05)
    assert [len(v) for v in vols] == [1, 1]


def test_slice_empty_stream():
    assert slice_stream(stream([]), 0.05) == []


def test_slice_uniform():
    ts = (np.arange(1000) + 0.5) / 1000
    vols = slice_stream(stream(ts), 0.1)
    assert [len(v) for v in vols] == [100] * 10


def test_slice_rejects_unsorted():
    with pytest.raises(SortingError):
        slice_stream(stream([0.2, 0.1]), 0.05)


def test_slice_rejects_bad_interval():
    with pytest.raises(EventError):
        slice_stream(stream([0.1]), 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), max_size=60), st.floats(0.01, 3))
def test_partition_property(ts, interval):
    s = stream(sorted(ts))
    vols = slice_stream(s, interval)
    assert sum(len(v) for v in vols) == len(s)
    if vols:
        np.testing.assert_array_equal(np.concatenate([v.t for v in vols]), s.t)
        for v in vols:
            assert np.all((v.t >= v.t_start) & (v.t <= v.t_end))
        for a, b in zip(vols, vols[1:]):
            assert a.t_end == pytest.approx(b.t_start)


def test_normalize_example():
    v = EventVolume(np.array([0, 0, 0]), np.array([0, 0, 0]), np.array([100.0, 100.1, 100.2]), np.array([1, 1, 1]), (2, 2), 100.0, 100.2)
    n = normalize_timestamps(v)
    np.testing.assert_allclose(n.t, [0.0, 0.5, 1.0], atol=1e-12)
    assert n.normalized
    assert normalize_timestamps(n) is n or np.array_equal(normalize_timestamps(n).t, n.t)


def test_normalize_degenerate():
    v = EventVolume(np.array([0]), np.array([0]), np.array([1.0]), np.array([1]), (2, 2), 1.0, 1.0)
    with pytest.raises(DegenerateIntervalError):
        normalize_timestamps(v)


def test_count_image_example():
    s = EventStream.from_events([Event(1, 1, 0.0, 1), Event(1, 1, 0.1, 1), Event(2, 0, 0.2, -1)], (3, 3))
    img = count_image(s)
    assert img.pos[1, 1] == 2 and img.neg[0, 2] == 1
    assert img.pos.sum() == 2 and img.neg.sum() == 1


def test_count_image_empty_and_unique():
    assert count_image(EventStream.empty((3, 3))).as_array().sum() == 0
    s = EventStream(np.arange(5), np.zeros(5, int), np.linspace(0, 1, 5), np.ones(5, int), (2, 5))
    img = count_image(s)
    assert img.pos.sum() == 5 and img.pos.max() == 1


def test_count_image_permutation_invariant(rng):
    n = 50
    s = EventStream(rng.integers(0, 8, n), rng.integers(0, 6, n), np.sort(rng.uniform(size=n)), rng.choice([-1, 1], n), (6, 8))
    perm = rng.permutation(n)
    t = EventStream(s.x[perm], s.y[perm], s.t[perm], s.p[perm], s.sensor_size)
    np.testing.assert_array_equal(count_image(s).as_array(), count_image(t).as_array())


def test_subpixel_events_bin_to_nearest_pixel():
    s = EventStream(np.array([1.4, 1.6]), np.array([0.2, 0.5]), np.array([0.0, 0.1]), np.array([1, 1]), (3, 3))
    assert s.subpixel
    img = count_image(s)
    assert img.pos[0, 1] == 1 and img.pos[1, 2] == 1


def test_bounds_and_polarity_checked():
    with pytest.raises(EventError):
        EventStream(np.array([5]), np.array([0]), np.array([0.0]), np.array([1]), (3, 3))
    with pytest.raises(EventError):
        EventStream(np.array([0]), np.array([0]), np.array([0.0]), np.array([0]), (3, 3))


@pytest.mark.parametrize("suffix", [".txt", ".evt"])
def test_file_round_trip(tmp_path, rng, suffix):
    n = 30
    s = EventStream(rng.integers(0, 8, n), rng.integers(0, 6, n), np.sort(rng.uniform(size=n)), rng.choice([-1, 1], n), (6, 8))
    path = tmp_path / f"ev{suffix}"
    write_events(path, s)
    r = read_events(path)
    assert r.sensor_size == (6, 8)
    for a, b in zip((s.x, s.y, s.t, s.p), (r.x, r.y, r.t, r.p)):
        np.testing.assert_array_equal(a, b)


def test_text_comments_and_subpixel(tmp_path):
    path = tmp_path / "e.txt"
    path.write_text("# sensor 4 5\n0.1 1.5 2.25 1  # a comment\n\n0.2 3 0 -1\n")
    s = read_events(path)
    assert s.sensor_size == (4, 5) and len(s) == 2
    assert s.x[0] == 1.5 and s.p[1] == -1
