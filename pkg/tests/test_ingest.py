import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mtecache.errors import ConfigError, ParseError
from mtecache.ingest import (
    NodeSite,
    SynthConfig,
    Trace,
    UserRecord,
    geolocate_and_assign,
    parse_trace,
    parse_users,
    parse_zip_table,
    serialize_trace,
    split_by_node,
    synth_trace,
)

RATINGS = b"""userId,movieId,rating,timestamp
7,500,4.0,1000030
3,20,3.5,1000010
7,20,1.0,1000020
"""


def test_ratings_sorted_and_reindexed():
    tr = parse_trace(io.BytesIO(RATINGS), "movielens_ratings")
    assert tr.timestamps.tolist() == [0, 10, 20]
    assert tr.n_contents == 2
    assert tr.content_map.tolist() == [20, 500]
    assert tr.content_ids.tolist() == [1, 1, 2]
    assert tr.user_ids.tolist() == [3, 7, 7]


def test_three_line_fixture_orders_by_time():
    text = "timestamp,user_id,content_id\n30,1,1\n10,2,2\n20,3,1\n"
    tr = parse_trace(text, "synthetic_csv")
    assert tr.timestamps.tolist() == [10, 20, 30]
    assert [e.user_id for e in tr] == [2, 3, 1]


def test_100k_layout_is_tab_separated_without_header():
    text = "196\t242\t3\t881250949\n186\t302\t3\t891717742\n22\t377\t1\t878887116\n"
    tr = parse_trace(text, "movielens_100k")
    assert tr.timestamps[0] == 0
    assert tr.content_map[tr.content_ids - 1].tolist() == [377, 242, 302]
    assert len(tr) == 3 and tr.n_contents == 3


def test_empty_stream_gives_empty_trace():
    for fmt in ("movielens_ratings", "synthetic_csv", "movielens_100k"):
        tr = parse_trace(b"", fmt)
        assert len(tr) == 0 and tr.n_contents == 0


def test_malformed_record_reports_line():
    bad = b"userId,movieId,rating,timestamp\n1,2,3.0,10\n1,xx,3.0,11\n"
    with pytest.raises(ParseError) as err:
        parse_trace(bad, "movielens_ratings")
    assert err.value.line == 3
    with pytest.raises(ParseError) as err:
        parse_trace(b"userId,movieId,rating,timestamp\n1,2\n", "movielens_ratings")
    assert err.value.line == 2


def test_unknown_format():
    with pytest.raises(ConfigError):
        parse_trace(b"", "parquet")


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10_000), st.integers(1, 50), st.integers(1, 30)), max_size=40))
def test_canonical_roundtrip(rows):
    ts = np.array([r[0] for r in rows], dtype=np.int64)
    order = np.argsort(ts, kind="stable")
    tr = Trace(ts[order], np.array([r[1] for r in rows])[order].astype(np.int64),
               np.array([r[2] for r in rows])[order].astype(np.int64), 30)
    back = parse_trace(serialize_trace(tr), "synthetic_csv")
    assert back.n_contents == 30
    assert list(back) == list(tr)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 10**6), min_size=1, max_size=30))
def test_dense_reindex_is_bijection(ids):
    text = "userId,movieId,rating,timestamp\n" + "".join(f"1,{c},1.0,{i}\n" for i, c in enumerate(ids))
    tr = parse_trace(text, "movielens_ratings")
    assert sorted(set(tr.content_ids.tolist())) == list(range(1, tr.n_contents + 1))
    np.testing.assert_array_equal(tr.content_map[tr.content_ids - 1], ids)


# ---------------------------------------------------------------- synthetic


def test_synth_is_deterministic():
    cfg = SynthConfig(n_contents=50, duration=1000, n_events=2000, drift_points=(500,), seed=3)
    a, b = serialize_trace(synth_trace(cfg)), serialize_trace(synth_trace(cfg))
    assert a.encode() == b.encode()


def test_synth_zero_exponent_is_uniform():
    cfg = SynthConfig(n_contents=20, duration=10**6, n_events=10**5, zipf_exponent=0.0, seed=1)
    counts = np.bincount(synth_trace(cfg).content_ids, minlength=21)[1:]
    assert stats.chisquare(counts).pvalue > 0.01


def test_synth_zipf_rank_ratio():
    cfg = SynthConfig(n_contents=100, duration=10**6, n_events=10**5, zipf_exponent=1.0, seed=2)
    counts = np.sort(np.bincount(synth_trace(cfg).content_ids))[::-1]
    assert counts[0] / counts[1] == pytest.approx(2.0, abs=0.1)


def test_synth_drift_changes_ranking():
    cfg = SynthConfig(n_contents=30, duration=2000, n_events=40_000, zipf_exponent=1.2,
                      drift_points=(1000,), seed=4)
    tr = synth_trace(cfg)
    before = np.bincount(tr.content_ids[tr.timestamps < 1000], minlength=31)
    after = np.bincount(tr.content_ids[tr.timestamps >= 1000], minlength=31)
    assert np.argmax(before) == 1
    assert np.argmax(after) != np.argmax(before)


def test_synth_rejects_negative_exponent():
    with pytest.raises(ConfigError):
        synth_trace(SynthConfig(zipf_exponent=-0.5))


# ---------------------------------------------------------------- geolocation


ZIPS = "zip,lat,lon\n10001,40.75,-73.99\n10002,40.71,-73.98\n90001,33.97,-118.24\n"


def test_zero_distance_and_boundary_inclusion():
    table = parse_zip_table(ZIPS)
    users = [UserRecord(1, 30, "F", "x", "10001")]
    node = NodeSite("A", 40.75, -73.99, 1.0)
    res = geolocate_and_assign(users, table, [node])
    assert res.vicinities[0].user_ids == {1}

    # node placed due north at exactly the user's projected distance
    from mtecache.ingest import project_local

    far = NodeSite("B", 40.76, -73.99, 0.0)
    origin = (40.75, -73.99)
    d = float(np.hypot(*(project_local(40.75, -73.99, origin) - project_local(40.76, -73.99, origin))))
    exact = NodeSite("B", 40.76, -73.99, d)
    assert geolocate_and_assign(users, table, [exact], origin=origin).vicinities[0].user_ids == {1}
    inside_by_less = NodeSite("B", 40.76, -73.99, d * (1 - 1e-9))
    assert geolocate_and_assign(users, table, [inside_by_less], origin=origin).vicinities[0].user_ids == set()
    assert geolocate_and_assign(users, table, [far], origin=origin).vicinities[0].user_ids == set()


def test_disjoint_ranges():
    table = parse_zip_table(ZIPS)
    users = [UserRecord(5, 30, "M", "x", "90001")]
    a = NodeSite("A", 33.97, -118.24, 2000.0)
    b = NodeSite("B", 40.75, -73.99, 2000.0)
    res = geolocate_and_assign(users, table, [a, b])
    assert res.vicinities[0].user_ids == {5}
    assert res.vicinities[1].user_ids == set()


def test_unknown_zip_uses_deterministic_fallback():
    table = parse_zip_table(ZIPS)
    users = [UserRecord(9, 30, "M", "x", "99999"), UserRecord(10, 30, "M", "x", "10002")]
    r1 = geolocate_and_assign(users, table, [])
    r2 = geolocate_and_assign(users, table, [])
    assert r1.fallback_count == 1
    assert r1.users == r2.users
    assert 33.97 <= r1.users[0].latitude <= 40.75


def test_parse_users_pipe_layout():
    users = parse_users(b"1|24|M|technician|85711\n2|53|F|other|94043\n")
    assert users[1] == UserRecord(2, 53, "F", "other", "94043")


def test_split_by_node_preserves_order():
    cfg = SynthConfig(n_contents=10, duration=500, n_events=300, n_users=6, seed=5)
    tr = synth_trace(cfg)
    from mtecache.ingest import NodeVicinity

    parts = split_by_node(tr, [NodeVicinity("a", frozenset({1, 2})), NodeVicinity("b", frozenset())])
    assert np.all(np.diff(parts["a"].timestamps) >= 0)
    assert set(parts["a"].user_ids.tolist()) <= {1, 2}
    assert len(parts["b"]) == 0
