"""Cache placement: complete popular contents plus orthogonal coded segments.

Every FAP keeps ``N_p = floor(alpha * C_f)`` popular contents whole and one
segment of each of ``N_a = N_s * (C_f - N_p)`` mediocre contents. Within an
inter-cluster of ``N_b <= N_s`` FAPs no two FAPs hold the same segment of a
content, so a user reaching all of them collects ``N_b`` distinct segments.
Inter-clusters reuse the reference assignment on a hexagonal lattice.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from mtecache.errors import ConfigError, InfeasiblePlacementError, ParseError

PLAN_VERSION = 1


def cardinalities(alpha, c_f, n_s):
    """``(N_p, N_a)`` for a FAP of capacity ``c_f`` content units."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha={alpha} outside [0, 1]")
    if c_f < 0 or n_s < 1:
        raise ConfigError("need C_f >= 0 and N_s >= 1")
    # tolerate representation error such as 0.29 * 100 = 28.999999999999996
    n_p = int(math.floor(alpha * c_f + 1e-9))
    return n_p, n_s * (c_f - n_p)


def split_popular_mediocre(ranked, alpha, c_f, n_s):
    """First ``N_p`` ids of ``ranked`` are popular, the next ``N_a`` mediocre."""
    n_p, n_a = cardinalities(alpha, c_f, n_s)
    ranked = [int(c) for c in ranked]
    if len(ranked) < n_p + n_a:
        warnings.warn(
            f"ranked list has {len(ranked)} ids, fewer than N_p + N_a = {n_p + n_a}; plan is partial",
            stacklevel=2,
        )
    return ranked[:n_p], ranked[n_p : n_p + n_a]


# ---------------------------------------------------------------- segments


@dataclass
class SegmentIndicator:
    """Binary ``N_a x N_s`` grid: row ``l`` marks the segment of ``content_ids[l]`` held."""

    fap_id: str
    content_ids: tuple
    matrix: np.ndarray

    @property
    def n_segments(self):
        return self.matrix.shape[1]

    def segments(self):
        """``{content_id: 1-based segment}`` for rows holding exactly one segment."""
        out = {}
        for c, row in zip(self.content_ids, self.matrix):
            hot = np.flatnonzero(row)
            if hot.size == 1:
                out[c] = int(hot[0]) + 1
        return out

    def same_assignment(self, other):
        return self.content_ids == other.content_ids and np.array_equal(self.matrix, other.matrix)


def segment_index(l, i, n_s):
    """1-based segment of mediocre row ``l`` stored by FAP ``i`` (both 0-based)."""
    return (l + i) % n_s + 1


def assign_segments(mediocre, n_b, n_s, fap_ids=None):
    """Rotational assignment: FAP ``i`` holds segment ``((l + i) mod N_s) + 1`` of row ``l``."""
    if n_b < 1:
        raise ConfigError("an inter-cluster needs at least one FAP")
    if n_b > n_s:
        raise InfeasiblePlacementError(
            f"N_b={n_b} FAPs cannot hold pairwise-distinct segments of a content split into N_s={n_s}"
        )
    fap_ids = list(fap_ids) if fap_ids is not None else [str(i) for i in range(n_b)]
    if len(fap_ids) != n_b:
        raise ConfigError(f"expected {n_b} FAP ids, got {len(fap_ids)}")
    content_ids = tuple(int(c) for c in mediocre)
    rows = np.arange(len(content_ids))
    out = []
    for i, fid in enumerate(fap_ids):
        z = np.zeros((len(content_ids), n_s), dtype=np.uint8)
        z[rows, (rows + i) % n_s] = 1
        out.append(SegmentIndicator(fid, content_ids, z))
    return out


def place_uav(ranked, c_u):
    """The first ``c_u`` ids, stored whole."""
    if c_u < 0:
        raise ConfigError("C_u must be >= 0")
    return [int(c) for c in ranked[:c_u]]


# ---------------------------------------------------------------- hexagonal reuse


def cluster_size(w, z):
    if w < 0 or z < 0 or (w == 0 and z == 0):
        raise ConfigError(f"(w, z) = ({w}, {z}) must be non-negative and not both zero")
    return w * w + w * z + z * z


def hex_rotate(q, r):
    """Axial coordinates rotated by 60 degrees counter-clockwise."""
    return -r, q + r


def hex_norm2(q, r):
    """Squared centre distance in cell-spacing units."""
    return q * q + q * r + r * r


def hex_distance(a, b):
    dq, dr = a[0] - b[0], a[1] - b[1]
    return (abs(dq) + abs(dr) + abs(dq + dr)) // 2


def hex_cells(radius):
    """All axial cells within ``radius`` steps of the origin."""
    return [
        (q, r)
        for q in range(-radius, radius + 1)
        for r in range(max(-radius, -q - radius), min(radius, -q + radius) + 1)
    ]


def reuse_offsets(w, z):
    """The six nearest co-class offsets: ``(w, z)`` and its 60-degree rotations."""
    cluster_size(w, z)
    out = [(w, z)]
    for _ in range(5):
        out.append(hex_rotate(*out[-1]))
    return out


def reuse_class(q, r, w, z):
    """Index in ``0..k-1`` of the cell's class modulo the reuse lattice.

    The lattice is spanned by ``a = (w, z)`` and ``b = rot60(a)``; its
    fundamental parallelogram holds exactly ``k`` cells. ``(q, r)`` is
    reduced into that parallelogram and the remainder cell is numbered by
    its position in a fixed enumeration.
    """
    k = cluster_size(w, z)
    bq, br = hex_rotate(w, z)
    # coordinates in the (a, b) basis scaled by det = k
    alpha = (w + z) * q + z * r
    beta = -z * q + w * r
    fa, fb = alpha // k, beta // k
    rq, rr = q - fa * w - fb * bq, r - fa * z - fb * br
    return _fundamental_cells(w, z).index((rq, rr))


_FUNDAMENTAL_CACHE = {}


def _fundamental_cells(w, z):
    key = (w, z)
    if key not in _FUNDAMENTAL_CACHE:
        k = cluster_size(w, z)
        span = 2 * (w + z) + 1
        cells = []
        for q in range(-span, span + 1):
            for r in range(-span, span + 1):
                a = (w + z) * q + z * r
                b = -z * q + w * r
                if 0 <= a < k and 0 <= b < k:
                    cells.append((q, r))
        cells.sort(key=lambda c: (hex_norm2(*c), c))
        if len(cells) != k:
            raise AssertionError("fundamental domain size mismatch")
        _FUNDAMENTAL_CACHE[key] = cells
    return _FUNDAMENTAL_CACHE[key]


# ---------------------------------------------------------------- plans


@dataclass
class FapCache:
    complete: list
    indicator: SegmentIndicator


@dataclass
class PlacementPlan:
    alpha: float
    c_f: int
    c_u: int
    n_s: int
    n_b: int
    w: int = 1
    z: int = 2
    faps: dict = field(default_factory=dict)  # fap id -> FapCache
    uavs: dict = field(default_factory=dict)  # uav id -> list of content ids
    clusters: list = field(default_factory=list)  # FAP ids per inter-cluster, co-index order

    def fap_of(self, fap_id):
        return self.faps[fap_id]

    def complete_set(self, node_id):
        if node_id in self.faps:
            return set(self.faps[node_id].complete)
        return set(self.uavs.get(node_id, ()))

    def segment_map(self, fap_id):
        return self.faps[fap_id].indicator.segments()


def reference_cluster(popular, mediocre, n_b, n_s):
    """Contents of one inter-cluster, indexed by co-index ``0..N_b-1``."""
    return [FapCache(list(popular), ind) for ind in assign_segments(mediocre, n_b, n_s)]


def intercluster_copy(reference, clusters, w, z, cells=None):
    """Replicate a reference inter-cluster over the network.

    ``clusters`` lists FAP ids per inter-cluster. Without ``cells`` the FAP
    at position ``i`` of every cluster receives co-index ``i``. With
    ``cells`` (FAP id -> axial hex coordinate) the co-index is the reuse
    class of the FAP's cell, so equal-class cells share an assignment.
    """
    k = cluster_size(w, z)
    n_b = len(reference)
    if cells is not None and k != n_b:
        raise InfeasiblePlacementError(f"reuse lattice ({w}, {z}) has cluster size {k}, not N_b={n_b}")
    out = {}
    for members in clusters:
        if len(members) > n_b:
            raise ConfigError(f"inter-cluster with {len(members)} FAPs exceeds N_b={n_b}")
        for i, fid in enumerate(members):
            idx = reuse_class(*cells[fid], w, z) if cells is not None else i
            ref = reference[idx]
            ind = SegmentIndicator(fid, ref.indicator.content_ids, ref.indicator.matrix.copy())
            out[fid] = FapCache(list(ref.complete), ind)
    return out


def build_plan(ranked, alpha, c_f, c_u, n_s, clusters, uav_ids=(), w=1, z=2):
    """Full network plan from a prediction ranking (popular first)."""
    popular, mediocre = split_popular_mediocre(ranked, alpha, c_f, n_s)
    n_b = max((len(c) for c in clusters), default=1)
    reference = reference_cluster(popular, mediocre, n_b, n_s)
    faps = intercluster_copy(reference, clusters, w, z)
    uav_list = place_uav(ranked, c_u)
    return PlacementPlan(
        alpha, c_f, c_u, n_s, n_b, w, z,
        faps=faps,
        uavs={u: list(uav_list) for u in uav_ids},
        clusters=[list(c) for c in clusters],
    )


# ---------------------------------------------------------------- verification


@dataclass(frozen=True)
class Violation:
    kind: str  # row_sum | orthogonality | capacity | co_index
    node: str
    content: int | None = None
    detail: str = ""


@dataclass
class VerificationReport:
    violations: list

    @property
    def ok(self):
        return not self.violations

    def count(self, kind):
        return sum(v.kind == kind for v in self.violations)


def verify_plan(plan, tol=1e-12):
    v = []
    for fid, cache in plan.faps.items():
        ind = cache.indicator
        for c, s in zip(ind.content_ids, ind.matrix.sum(axis=1)):
            if s != 1:
                v.append(Violation("row_sum", fid, c, f"row sum {int(s)}"))
        load = len(cache.complete) + ind.matrix.sum() / plan.n_s
        if load > plan.c_f + tol:
            v.append(Violation("capacity", fid, None, f"load {load:.6g} > C_f={plan.c_f}"))
    for uid, items in plan.uavs.items():
        if len(items) > plan.c_u:
            v.append(Violation("capacity", uid, None, f"{len(items)} contents > C_u={plan.c_u}"))

    for members in plan.clusters:
        rows = {}
        for fid in members:
            ind = plan.faps[fid].indicator
            for c, row in zip(ind.content_ids, ind.matrix):
                rows.setdefault(c, []).append((fid, row))
        for c, held in rows.items():
            for i in range(len(held)):
                for j in range(i + 1, len(held)):
                    if int(np.dot(held[i][1], held[j][1])) != 0:
                        v.append(Violation("orthogonality", f"{held[i][0]}|{held[j][0]}", c,
                                           "shared segment"))

    if plan.clusters:
        ref = plan.clusters[0]
        for members in plan.clusters[1:]:
            for i, fid in enumerate(members):
                if i >= len(ref):
                    break
                a, b = plan.faps[ref[i]], plan.faps[fid]
                if a.complete != b.complete or not a.indicator.same_assignment(b.indicator):
                    v.append(Violation("co_index", fid, None, f"differs from {ref[i]} at co-index {i}"))
    return VerificationReport(v)


# ---------------------------------------------------------------- serialisation


def plan_to_csv(plan, header=""):
    out = io.StringIO()
    out.write(header)
    out.write(
        f"# mtecache-plan version={PLAN_VERSION} alpha={plan.alpha!r} c_f={plan.c_f} c_u={plan.c_u} "
        f"n_s={plan.n_s} n_b={plan.n_b} w={plan.w} z={plan.z}\n"
    )
    for members in plan.clusters:
        out.write(f"# cluster {';'.join(members)}\n")
    out.write(f"# uavs {';'.join(plan.uavs)}\n")
    out.write("node_id,kind,content_id,segment_id\n")
    for fid, cache in plan.faps.items():
        for c in cache.complete:
            out.write(f"{fid},complete,{c},\n")
        for c, row in zip(cache.indicator.content_ids, cache.indicator.matrix):
            for s in np.flatnonzero(row):
                out.write(f"{fid},segment,{c},{int(s) + 1}\n")
    for uid, items in plan.uavs.items():
        for c in items:
            out.write(f"{uid},complete,{c},\n")
    return out.getvalue()


def plan_from_csv(text):
    params, clusters, uav_ids = None, [], []
    complete, segments = {}, {}
    seen_header = False
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith("# mtecache-plan"):
            kv = dict(tok.split("=", 1) for tok in line.split()[2:])
            if int(kv["version"]) != PLAN_VERSION:
                raise ParseError(f"unsupported plan version {kv['version']}", lineno)
            params = kv
        elif line.startswith("# cluster "):
            clusters.append([f for f in line[len("# cluster ") :].split(";") if f])
        elif line.startswith("# uavs"):
            uav_ids = [u for u in line[len("# uavs") :].strip().split(";") if u]
        elif line.startswith("#") or not line.strip():
            continue
        elif not seen_header:
            if line != "node_id,kind,content_id,segment_id":
                raise ParseError(f"unexpected header {line!r}", lineno)
            seen_header = True
        else:
            parts = line.split(",")
            if len(parts) != 4 or parts[1] not in ("complete", "segment"):
                raise ParseError(f"malformed plan record {line!r}", lineno)
            try:
                node, kind, c = parts[0], parts[1], int(parts[2])
                if kind == "complete":
                    complete.setdefault(node, []).append(c)
                else:
                    segments.setdefault(node, []).append((c, int(parts[3])))
            except ValueError as err:
                raise ParseError(str(err), lineno) from None
    if params is None:
        raise ParseError("missing plan parameter line", 1)
    n_s = int(params["n_s"])
    plan = PlacementPlan(
        float(params["alpha"]), int(params["c_f"]), int(params["c_u"]), n_s,
        int(params["n_b"]), int(params["w"]), int(params["z"]), clusters=clusters,
    )
    fap_ids = [f for members in clusters for f in members]
    for fid in fap_ids:
        held = segments.get(fid, [])
        ids = tuple(dict.fromkeys(c for c, _ in held))
        z = np.zeros((len(ids), n_s), dtype=np.uint8)
        pos = {c: i for i, c in enumerate(ids)}
        for c, s in held:
            z[pos[c], s - 1] = 1
        plan.faps[fid] = FapCache(complete.get(fid, []), SegmentIndicator(fid, ids, z))
    for uid in uav_ids:
        plan.uavs[uid] = complete.get(uid, [])
    return plan
