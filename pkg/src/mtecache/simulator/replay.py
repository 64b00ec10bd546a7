"""Trace replay for the planned, reactive and oracle policies, plus metrics."""

from __future__ import annotations

import io
from collections import Counter, OrderedDict
from dataclasses import dataclass, field

import numpy as np

from mtecache.errors import ConfigError, DataError
from mtecache.simulator.kernels import POLICIES
from mtecache.simulator.routing import SERVED_BY, PlanView, route_request

POLICY_NAMES = ("mtec", "lru", "lfu", "oracle")


# ---------------------------------------------------------------- metrics


@dataclass
class MetricsReport:
    policy: str
    requests: int = 0
    hits: int = 0
    cache_bytes: int = 0
    managed_bytes: int = 0  # bytes of requests that touched at least one cache
    server_bytes: int = 0
    served_by: Counter = field(default_factory=Counter)

    @property
    def cache_hit_ratio(self):
        return self.hits / self.requests if self.requests else 0.0

    @property
    def transferred_byte_volume(self):
        return self.cache_bytes / self.managed_bytes if self.managed_bytes else 0.0

    def add(self, outcome, content_size):
        self.requests += 1
        self.hits += outcome.hit
        self.cache_bytes += outcome.bytes_from_cache
        self.server_bytes += outcome.bytes_from_server
        if outcome.touched_cache:
            self.managed_bytes += content_size
        self.served_by[outcome.served_by] += 1

    def merge(self, other):
        out = MetricsReport(self.policy)
        for name in ("requests", "hits", "cache_bytes", "managed_bytes", "server_bytes"):
            setattr(out, name, getattr(self, name) + getattr(other, name))
        out.served_by = self.served_by + other.served_by
        return out


def metrics(reports, policy=None):
    """Sum per-interval reports into one."""
    reports = list(reports)
    total = MetricsReport(policy or (reports[0].policy if reports else ""))
    for r in reports:
        total = total.merge(r)
    return total


REPORT_COLUMNS = "policy,updating_time,requests,hits,hit_ratio,cache_bytes,managed_bytes,byte_volume"


def report_rows(policy, per_interval, label=None):
    """CSV rows (no header): one per interval and an ``all`` summary row."""
    label = label or policy
    lines = []
    for t in sorted(per_interval):
        r = per_interval[t]
        lines.append(_row(label, t, r))
    lines.append(_row(label, "all", metrics(per_interval.values(), policy)))
    return lines


def _row(label, t, r):
    return (
        f"{label},{t},{r.requests},{r.hits},{r.cache_hit_ratio:.10f},"
        f"{r.cache_bytes},{r.managed_bytes},{r.transferred_byte_volume:.10f}"
    )


def report_csv(rows, header=""):
    out = io.StringIO()
    out.write(header)
    out.write(REPORT_COLUMNS + "\n")
    for line in rows:
        out.write(line + "\n")
    return out.getvalue()


# ---------------------------------------------------------------- request context


@dataclass
class LocatedRequests:
    """Policy-independent per-request context."""

    content_ids: np.ndarray
    interval: np.ndarray
    position: np.ndarray  # (E, 2)
    mobile: np.ndarray  # bool: served via UAV
    node: np.ndarray  # nearest FAP index, or N_f + nearest UAV index

    def __len__(self):
        return len(self.content_ids)


def locate_requests(trace, topology, window, seed=0):
    """Draw a position for every request from its user's mixture component."""
    rng = np.random.default_rng(seed)
    n = len(trace)
    users = topology.user_index(trace.user_ids)
    comp = topology.user_component[users]
    pos = topology.gmm_means[comp] + rng.normal(0.0, topology.gmm_std, size=(n, 2)) if n else np.zeros((0, 2))
    mobile = ~topology.user_indoor[users] & (topology.user_speed[users] >= topology.speed_threshold)
    node = np.empty(n, dtype=np.int64)
    n_f = len(topology.fap_xy)
    if n:
        d_fap = np.linalg.norm(pos[:, None, :] - topology.fap_xy[None], axis=-1)
        d_uav = np.linalg.norm(pos[:, None, :] - topology.uav_xy[None], axis=-1)
        node = np.where(mobile, n_f + np.argmin(d_uav, axis=1), np.argmin(d_fap, axis=1))
    return LocatedRequests(trace.content_ids.copy(), trace.timestamps // window, pos, mobile, node)


# ---------------------------------------------------------------- policies


def replay_plan(located, schedule, topology, intervals, content_size, n_contents, policy="mtec"):
    """Route each request of ``intervals`` under the plan scheduled for its interval."""
    missing = [t for t in intervals if t not in schedule]
    if missing:
        raise DataError(f"no placement plan for updating time(s) {missing[:5]}")
    per = {t: MetricsReport(policy) for t in intervals}
    views = {}
    for i in np.flatnonzero(np.isin(located.interval, list(intervals))):
        t = int(located.interval[i])
        if t not in views:
            views[t] = PlanView(schedule[t], topology)
        out = route_request(
            located.position[i], bool(located.mobile[i]), int(located.content_ids[i]),
            views[t], topology, content_size, n_contents, request_id=int(i),
        )
        per[t].add(out, content_size)
    return per


def replay_reactive(located, topology, policy, c_f, c_u, intervals, content_size, backend=None):
    """Per-node LRU/LFU caches warmed over the whole trace, scored on ``intervals``."""
    if policy not in POLICIES:
        raise ConfigError(f"unknown reactive policy {policy!r}")
    kernel = POLICIES[policy]
    n_f = len(topology.fap_xy)
    hits = np.zeros(len(located), dtype=bool)
    for node in np.unique(located.node):
        idx = np.flatnonzero(located.node == node)
        cap = c_f if node < n_f else c_u
        hits[idx] = kernel(located.content_ids[idx], cap, backend=backend)
    per = {t: MetricsReport(policy) for t in intervals}
    mask = np.isin(located.interval, list(intervals))
    for t in intervals:
        sel = mask & (located.interval == t)
        r = per[t]
        r.requests = int(sel.sum())
        r.hits = int(hits[sel].sum())
        r.cache_bytes = r.managed_bytes = r.hits * content_size
        r.server_bytes = (r.requests - r.hits) * content_size
        served = np.where(located.mobile[sel], "uav", "fap_st")[hits[sel]]
        r.served_by = Counter(served.tolist())
        r.served_by["server"] += r.requests - r.hits
    return per


def replay_oracle(located, intervals, content_size):
    """Every request is served from a cache."""
    per = {}
    for t in intervals:
        n = int((located.interval == t).sum())
        per[t] = MetricsReport("oracle", n, n, n * content_size, n * content_size, 0, Counter(oracle=n))
    return per


def replay(located, topology, policy, intervals, content_size, n_contents=None, schedule=None,
           c_f=None, c_u=None, backend=None):
    """Dispatch on ``policy``; returns ``{interval: MetricsReport}``."""
    intervals = sorted(int(t) for t in intervals)
    if policy in ("mtec", "mtec_coded", "mtec_uncoded"):
        if schedule is None or n_contents is None:
            raise ConfigError("the planned policy needs a plan schedule and the library size")
        return replay_plan(located, schedule, topology, intervals, content_size, n_contents, policy)
    if policy in POLICIES:
        if c_f is None or c_u is None:
            raise ConfigError("reactive policies need C_f and C_u")
        return replay_reactive(located, topology, policy, c_f, c_u, intervals, content_size, backend)
    if policy == "oracle":
        return replay_oracle(located, intervals, content_size)
    raise ConfigError(f"unknown policy {policy!r}; expected one of {POLICY_NAMES}")


# ---------------------------------------------------------------- step-wise baseline


class ReactiveCache:
    """One node's LRU or LFU cache, one request at a time."""

    def __init__(self, policy, capacity):
        if policy not in POLICIES:
            raise ConfigError(f"unknown reactive policy {policy!r}")
        if capacity < 1:
            raise ConfigError("capacity must be >= 1")
        self.policy = policy
        self.capacity = capacity
        self.items = OrderedDict()  # recency order, oldest first
        self.counts = Counter()

    def request(self, content):
        self.counts[content] += 1
        if content in self.items:
            self.items.move_to_end(content)
            return True
        if len(self.items) >= self.capacity:
            if self.policy == "lru":
                self.items.popitem(last=False)
            else:
                # iteration runs oldest first, so min() keeps the least recent on ties
                victim = min(self.items, key=lambda c: self.counts[c])
                del self.items[victim]
        self.items[content] = None
        return False


def baseline_step(state, content, node):
    """Advance node ``node`` of ``state`` (``{node: ReactiveCache}``); returns ``(hit, state)``."""
    return state[node].request(content), state


__all__ = [
    "LocatedRequests",
    "MetricsReport",
    "POLICY_NAMES",
    "REPORT_COLUMNS",
    "ReactiveCache",
    "SERVED_BY",
    "baseline_step",
    "locate_requests",
    "metrics",
    "replay",
    "replay_oracle",
    "replay_plan",
    "replay_reactive",
    "report_csv",
    "report_rows",
]
