"""Topology generation, request routing and trace replay."""

from mtecache.simulator.kernels import BACKEND, lfu_hits, lru_hits
from mtecache.simulator.replay import (
    LocatedRequests,
    MetricsReport,
    ReactiveCache,
    baseline_step,
    locate_requests,
    metrics,
    replay,
    report_csv,
    report_rows,
)
from mtecache.simulator.routing import DeliveryOutcome, PlanView, route_request
from mtecache.simulator.topology import Topology, TopologyConfig, generate_topology, group_faps, kmeans

__all__ = [
    "BACKEND",
    "DeliveryOutcome",
    "LocatedRequests",
    "MetricsReport",
    "PlanView",
    "ReactiveCache",
    "Topology",
    "TopologyConfig",
    "baseline_step",
    "generate_topology",
    "group_faps",
    "kmeans",
    "lfu_hits",
    "locate_requests",
    "lru_hits",
    "metrics",
    "replay",
    "report_csv",
    "report_rows",
    "route_request",
]
