"""Network layout: PPP-placed FAPs grouped into inter-clusters, UAVs over user hot spots."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from mtecache.errors import ConfigError
from mtecache.placement import cluster_size


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int


def _assign(points, centroids):
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(points)), labels]


def kmeans_pp_init(points, k, rng):
    """k-means++ seeding: each new centre drawn with probability proportional to D^2."""
    n = len(points)
    idx = [int(rng.integers(n))]
    d2 = ((points - points[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        nxt = int(rng.choice(n, p=d2 / total)) if total > 0 else int(rng.integers(n))
        idx.append(nxt)
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[idx].copy()


def kmeans(points, k, seed=0, max_iter=100, init=None):
    """Lloyd iterations from k-means++ (or given) centroids.

    An emptied cluster is re-seeded at the point farthest from its current
    centroid.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be an (n, dim) array")
    if not 1 <= k <= len(points):
        raise ConfigError(f"k-means needs 1 <= k <= {len(points)} points, got k={k}")
    rng = np.random.default_rng(seed)
    centroids = kmeans_pp_init(points, k, rng) if init is None else np.array(init, dtype=np.float64)
    labels, d2 = _assign(points, centroids)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        for j in range(k):
            members = labels == j
            if members.any():
                centroids[j] = points[members].mean(axis=0)
            else:
                far = int(np.argmax(d2))
                centroids[j] = points[far]
                d2[far] = 0.0
        new_labels, d2 = _assign(points, centroids)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return KMeansResult(centroids, labels, float(d2.sum()), n_iter)


@dataclass
class TopologyConfig:
    width: float = 1000.0
    height: float = 1000.0
    fap_intensity: float = 21e-6  # FAPs per square metre
    n_faps: int | None = None  # fixed count instead of a Poisson draw
    n_uavs: int = 3
    n_users: int = 1000
    gmm_components: int = 3
    gmm_std: float = 150.0
    indoor_prob: float = 0.5
    speed_mean: float = 5.0  # m/s, exponential
    speed_threshold: float = 5.0
    cell_core_radius: float = 150.0
    fap_range: float = 450.0
    w: int = 1
    z: int = 2
    seed: int = 0

    def validate(self):
        errors = []
        if self.width <= 0 or self.height <= 0:
            errors.append("area must be positive")
        if self.fap_intensity <= 0 and self.n_faps is None:
            errors.append("fap_intensity must be positive")
        for name in ("n_uavs", "n_users", "gmm_components"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if not 0 <= self.indoor_prob <= 1:
            errors.append("indoor_prob outside [0, 1]")
        for name in ("gmm_std", "speed_mean", "speed_threshold", "cell_core_radius", "fap_range"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0")
        if errors:
            raise ConfigError("; ".join(errors))
        cluster_size(self.w, self.z)
        return self

    @property
    def cluster_size(self):
        return cluster_size(self.w, self.z)


@dataclass
class Topology:
    fap_xy: np.ndarray
    uav_xy: np.ndarray
    clusters: list  # arrays of FAP indices, co-index order
    user_component: np.ndarray
    user_indoor: np.ndarray
    user_speed: np.ndarray
    gmm_means: np.ndarray
    gmm_std: float
    speed_threshold: float
    cell_core_radius: float
    fap_range: float
    fap_cluster: np.ndarray = field(init=False)

    def __post_init__(self):
        self.fap_cluster = np.full(len(self.fap_xy), -1, dtype=np.int64)
        for j, members in enumerate(self.clusters):
            if np.any(self.fap_cluster[members] >= 0):
                raise ConfigError("a FAP belongs to more than one inter-cluster")
            self.fap_cluster[members] = j
        if np.any(self.fap_cluster < 0):
            raise ConfigError("every FAP must belong to an inter-cluster")

    @property
    def fap_ids(self):
        return [f"f{i}" for i in range(len(self.fap_xy))]

    @property
    def uav_ids(self):
        return [f"u{i}" for i in range(len(self.uav_xy))]

    @property
    def cluster_ids(self):
        """FAP ids per inter-cluster, as placement expects them."""
        ids = self.fap_ids
        return [[ids[i] for i in members] for members in self.clusters]

    @property
    def n_users(self):
        return len(self.user_component)

    def user_index(self, user_id):
        """Trace user ids are folded onto the simulated population."""
        return (np.asarray(user_id, dtype=np.int64) - 1) % self.n_users


def group_faps(fap_xy, k, seed=0):
    """Balanced inter-clusters of at most ``k`` FAPs around k-means centres.

    FAP/centre pairs are taken in order of distance and a FAP joins the
    nearest centre that still has room. Members are then ordered by angle
    around their centre, which fixes the co-index.
    """
    n = len(fap_xy)
    n_clusters = math.ceil(n / k)
    centres = kmeans(fap_xy, n_clusters, seed=seed).centroids
    d = np.linalg.norm(fap_xy[:, None, :] - centres[None, :, :], axis=-1)
    order = np.argsort(d, axis=None, kind="stable")
    owner = np.full(n, -1)
    room = np.full(n_clusters, k)
    for flat in order:
        f, c = divmod(int(flat), n_clusters)
        if owner[f] < 0 and room[c] > 0:
            owner[f] = c
            room[c] -= 1
    clusters = []
    for c in range(n_clusters):
        members = np.flatnonzero(owner == c)
        if members.size == 0:
            continue
        rel = fap_xy[members] - fap_xy[members].mean(axis=0)
        ang = np.arctan2(rel[:, 1], rel[:, 0])
        clusters.append(members[np.lexsort((members, ang))])
    return clusters


def generate_topology(config):
    config.validate()
    rng = np.random.default_rng(config.seed)
    area = config.width * config.height
    n_faps = config.n_faps if config.n_faps is not None else int(rng.poisson(config.fap_intensity * area))
    k = config.cluster_size
    if n_faps < k:
        raise ConfigError(
            f"only {n_faps} FAPs for inter-clusters of {k}; raise fap_intensity or the area"
        )
    size = np.array([config.width, config.height])
    fap_xy = rng.uniform(0, 1, size=(n_faps, 2)) * size
    means = rng.uniform(0, 1, size=(config.gmm_components, 2)) * size
    comp = rng.integers(config.gmm_components, size=config.n_users)
    home = means[comp] + rng.normal(0.0, config.gmm_std, size=(config.n_users, 2))
    indoor = rng.random(config.n_users) < config.indoor_prob
    speed = rng.exponential(config.speed_mean, size=config.n_users) if config.speed_mean > 0 else np.zeros(config.n_users)
    n_uavs = min(config.n_uavs, config.n_users)
    uav_xy = kmeans(home, n_uavs, seed=config.seed).centroids
    clusters = group_faps(fap_xy, k, seed=config.seed)
    return Topology(
        fap_xy, uav_xy, clusters, comp, indoor, speed, means, config.gmm_std,
        config.speed_threshold, config.cell_core_radius, config.fap_range,
    )
