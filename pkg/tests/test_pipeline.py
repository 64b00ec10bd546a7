import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtecache.errors import ConfigError, DataError
from mtecache.ingest import Trace
from mtecache.pipeline import (
    RequestMatrix,
    WindowedRequests,
    build_request_matrix,
    dump_samples,
    gaf_transform,
    label_topk,
    load_samples,
    minmax_normalize,
    request_probability,
    segment_samples,
    skewness,
    window_counts,
    window_event_counts,
    window_skewness,
)


def trace_of(events, n_c):
    ts = np.array([e[0] for e in events], dtype=np.int64)
    cs = np.array([e[1] for e in events], dtype=np.int64)
    return Trace(ts, np.ones_like(ts), cs, n_c)


def brute_force_labels(p, zeta, k):
    """Enumerate contents, sort with the full key, take the first k."""
    keyed = sorted(range(len(p)), key=lambda l: (0 if zeta[l] < 0 else 1, -p[l], l))
    y = [0] * len(p)
    for l in keyed[:k]:
        y[l] = 1
    return y


def reference_skewness(values):
    n = len(values)
    mean = sum(values) / n
    m2 = sum((v - mean) ** 2 for v in values) / n
    m3 = sum((v - mean) ** 3 for v in values) / n
    if n < 3 or m2 == 0:
        return 0.0
    return math.sqrt(n * (n - 1)) / (n - 2) * m3 / m2**1.5


# ---------------------------------------------------------------- request matrix


def test_empty_trace_gives_zero_matrix():
    m = build_request_matrix(trace_of([], 3), 3, 10)
    assert m.dense().sum() == 0


def test_single_event_indexing():
    grid = build_request_matrix(trace_of([(5, 2)], 3), 3, 10).dense()
    assert grid.sum() == 1 and grid[1, 5] == 1  # content 2 -> row index 1


def test_duplicate_events_clamp_to_one():
    grid = build_request_matrix(trace_of([(4, 1), (4, 1)], 2), 2, 6).dense()
    assert grid[0, 4] == 1 and grid.sum() == 1


def test_out_of_range_event_named():
    with pytest.raises(DataError, match="t=12"):
        build_request_matrix(trace_of([(12, 1)], 2), 2, 10)
    with pytest.raises(DataError, match="content=3"):
        build_request_matrix(trace_of([(1, 3)], 3), 2, 10)


# ---------------------------------------------------------------- windowing


def test_window_equal_to_t_gives_row_sums():
    rng = np.random.default_rng(0)
    grid = (rng.random((4, 12)) > 0.6).astype(int)
    w = window_counts(RequestMatrix.from_dense(grid), 12)
    np.testing.assert_array_equal(w.counts[:, 0], grid.sum(axis=1))


def test_window_hand_example():
    w = window_counts(RequestMatrix.from_dense([[1, 1, 0, 1]]), 2)
    np.testing.assert_array_equal(w.counts, [[2, 1]])


def test_trailing_partial_window_dropped_and_zero_case():
    w = window_counts(RequestMatrix.from_dense(np.zeros((2, 7), int)), 3)
    assert w.counts.shape == (2, 2) and w.counts.sum() == 0


def test_window_longer_than_trace():
    with pytest.raises(ConfigError):
        window_counts(RequestMatrix.from_dense(np.zeros((1, 3), int)), 4)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 30), st.integers(0, 2**31))
def test_window_column_sum_is_active_seconds(n_c, width, seed):
    rng = np.random.default_rng(seed)
    grid = (rng.random((n_c, 30)) > 0.5).astype(int)
    w = window_counts(RequestMatrix.from_dense(grid), width)
    for u in range(w.n_windows):
        assert w.counts[:, u].sum() == grid[:, u * width : (u + 1) * width].sum()


def test_raw_event_counts_keep_duplicates():
    tr = trace_of([(0, 1), (0, 1), (3, 2)], 2)
    np.testing.assert_array_equal(window_event_counts(tr, 2, 2, 2).counts, [[2, 0], [0, 1]])


# ---------------------------------------------------------------- segmentation


def _windowed(n_c, n_w, seed=0):
    rng = np.random.default_rng(seed)
    return WindowedRequests(rng.integers(0, 9, size=(n_c, n_w)), 1)


def test_minimal_segmentation():
    s = segment_samples(_windowed(3, 5), lookback=4, k=1)
    assert len(s) == 1


def test_segment_count_formula():
    s = segment_samples(_windowed(5, 12), lookback=4, k=2)
    assert len(s) == 8
    np.testing.assert_array_equal(s.x[3], _windowed(5, 12).counts[:, 3:7])


def test_non_overlapping_stride_tiles():
    s = segment_samples(_windowed(2, 13), lookback=4, k=1, stride=4)
    cols = [set(range(st, st + 4)) for st in s.start]
    assert all(a.isdisjoint(b) for i, a in enumerate(cols) for b in cols[i + 1 :])
    assert len(s) == (13 - 4) // 4


def test_lookback_must_leave_a_label_interval():
    with pytest.raises(ConfigError):
        segment_samples(_windowed(2, 4), lookback=4, k=1)


def test_labels_use_next_interval():
    counts = np.array([[0, 0, 0, 9], [5, 5, 5, 0], [1, 1, 1, 1]])
    s = segment_samples(WindowedRequests(counts, 1), lookback=3, k=1)
    # content 2 has no negative skew; content 1 has <3 requests in the span
    np.testing.assert_array_almost_equal(s.p_next[0], [0.9, 0.0, 0.1])
    np.testing.assert_array_equal(s.y[0], [1, 0, 0])


# ---------------------------------------------------------------- probability


def test_request_probability_examples():
    np.testing.assert_array_equal(request_probability([2, 2, 2, 2]), [0.25] * 4)
    np.testing.assert_array_equal(request_probability([3, 1, 0]), [0.75, 0.25, 0.0])
    np.testing.assert_array_equal(request_probability([0, 0, 0]), [0.0, 0.0, 0.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=60).filter(lambda c: sum(c) > 0))
def test_request_probability_sums_to_one(counts):
    assert abs(request_probability(counts).sum() - 1.0) < 1e-12


# ---------------------------------------------------------------- skewness


def test_skewness_symmetric_is_zero():
    assert skewness([1, 2, 3, 4, 5]) == pytest.approx(0.0, abs=1e-15)
    assert skewness([1, 1, 10, 10]) == pytest.approx(0.0, abs=1e-15)


def test_skewness_late_mass_is_negative():
    z = skewness([1, 9, 10, 10])
    assert z < 0
    assert z == pytest.approx(reference_skewness([1, 9, 10, 10]), rel=1e-12)


def test_skewness_degenerate_cases():
    assert skewness([3, 7]) == 0.0
    assert skewness([4, 4, 4, 4]) == 0.0
    assert skewness([]) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=12))
def test_window_skewness_matches_expanded_multiset(row):
    expanded = [t for t, c in enumerate(row) for _ in range(c)]
    got = window_skewness(np.array([row]))[0]
    want = reference_skewness(expanded) if len(expanded) >= 3 else 0.0
    assert got == pytest.approx(want, abs=1e-9)


# ---------------------------------------------------------------- labels


def test_label_topk_examples():
    np.testing.assert_array_equal(label_topk([0.2, 0.5, 0.3], [1, 1, 1], 3), [1, 1, 1])
    np.testing.assert_array_equal(label_topk([0.5, 0.3, 0.2], [1, -1, -1], 2), [0, 1, 1])
    np.testing.assert_array_equal(label_topk([0.1, 0.5, 0.4, 0.0], [0, 2, 0, 1], 2), [0, 1, 1, 0])


def test_label_ties_prefer_lower_id():
    np.testing.assert_array_equal(label_topk([0.25] * 4, [0] * 4, 2), [1, 1, 0, 0])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 50), st.integers(0, 2**31), st.floats(0.01, 100))
def test_label_topk_matches_brute_force_and_is_scale_invariant(n_c, seed, scale):
    rng = np.random.default_rng(seed)
    p = rng.integers(0, 5, size=n_c) / 4.0  # ties on purpose
    zeta = rng.choice([-1.0, 0.0, 0.5], size=n_c)
    k = int(rng.integers(0, n_c + 1))
    y = label_topk(p, zeta, k)
    assert y.sum() == k
    assert y.tolist() == brute_force_labels(p, zeta, k)
    np.testing.assert_array_equal(label_topk(p * scale, zeta, k), y)


# ---------------------------------------------------------------- normalisation / GAF


def test_minmax_examples():
    np.testing.assert_array_equal(minmax_normalize([[2, 4, 6]]), [[0.0, 0.5, 1.0]])
    np.testing.assert_array_equal(minmax_normalize([[3, 3, 3]]), [[0.0, 0.0, 0.0]])
    np.testing.assert_array_equal(minmax_normalize([[0, 0.25, 1]]), [[0, 0.25, 1]])


def test_gaf_examples():
    np.testing.assert_allclose(gaf_transform([1, -1]), [[1, -1], [-1, 1]], atol=1e-15)
    np.testing.assert_allclose(gaf_transform([0, 0, 0]), -np.ones((3, 3)), atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_gaf_symmetric_and_bounded(series):
    g = gaf_transform(series)
    assert np.array_equal(g, g.T)
    assert np.all(g >= -1) and np.all(g <= 1)
    x = np.asarray(series)
    if x.max() > x.min():
        scaled = (2 * x - x.max() - x.min()) / (x.max() - x.min())
        np.testing.assert_allclose(np.diag(g), np.cos(2 * np.arccos(np.clip(scaled, -1, 1))), atol=1e-12)


# ---------------------------------------------------------------- label contract + serialisation


def test_every_sample_has_k_ones():
    s = segment_samples(_windowed(20, 40, seed=3), lookback=6, k=7, stride=2)
    assert np.all(s.y.sum(axis=1) == 7)


def test_sample_roundtrip():
    s = segment_samples(_windowed(6, 15, seed=4), lookback=5, k=2)
    back = load_samples(dump_samples(s))
    for name in ("x", "y", "p_next", "start"):
        np.testing.assert_array_equal(getattr(back, name), getattr(s, name))
    assert back.k == 2
