"""Per-request delivery decision under a placement plan."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mtecache.errors import DataError

SERVED_BY = ("fap_st", "fap_jt", "uav", "server", "mixed")


@dataclass(frozen=True)
class DeliveryOutcome:
    served_by: str
    bytes_from_cache: int
    bytes_from_server: int
    request_id: int = -1

    @property
    def hit(self):
        return self.bytes_from_server == 0

    @property
    def touched_cache(self):
        return self.bytes_from_cache > 0


class PlanView:
    """Per-node lookup tables built once per plan."""

    def __init__(self, plan, topology):
        ids = topology.fap_ids
        self.n_s = plan.n_s
        self.complete = [set(plan.faps[f].complete) if f in plan.faps else set() for f in ids]
        self.segments = [plan.segment_map(f) if f in plan.faps else {} for f in ids]
        self.uav = [set(plan.uavs.get(u, ())) for u in topology.uav_ids]


def _split_bytes(size, n_s, segments):
    if size % n_s:
        raise DataError(f"content size {size} is not divisible by N_s={n_s}")
    got = segments * (size // n_s)
    return got, size - got


def route_request(position, mobile, content_id, view, topology, content_size, n_contents, request_id=-1):
    """Serve one request.

    Static or indoor users go through FAPs, the rest through the nearest UAV.
    On the FAP side: a cell-core FAP holding the whole content serves alone,
    otherwise an inter-cluster whose FAPs all hold it serves jointly, and
    failing both, distinct segments reachable within the inter-cluster are
    combined with the remainder fetched from the server.
    """
    if not 1 <= content_id <= n_contents:
        raise DataError(f"unknown content id {content_id} (library has {n_contents})")
    pos = np.asarray(position, dtype=np.float64)

    if mobile:
        u = int(np.argmin(np.linalg.norm(topology.uav_xy - pos, axis=1)))
        if content_id in view.uav[u]:
            return DeliveryOutcome("uav", content_size, 0, request_id)
        return DeliveryOutcome("server", 0, content_size, request_id)

    dist = np.linalg.norm(topology.fap_xy - pos, axis=1)
    for f in np.flatnonzero(dist <= topology.cell_core_radius):
        if content_id in view.complete[f]:
            return DeliveryOutcome("fap_st", content_size, 0, request_id)
    members = topology.clusters[topology.fap_cluster[int(np.argmin(dist))]]
    if all(content_id in view.complete[f] for f in members):
        return DeliveryOutcome("fap_jt", content_size, 0, request_id)

    found = {
        view.segments[f][content_id]
        for f in members
        if dist[f] <= topology.fap_range and content_id in view.segments[f]
    }
    if not found:
        return DeliveryOutcome("server", 0, content_size, request_id)
    cache_b, server_b = _split_bytes(content_size, view.n_s, len(found))
    return DeliveryOutcome("fap_jt" if server_b == 0 else "mixed", cache_b, server_b, request_id)
