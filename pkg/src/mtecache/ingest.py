"""Request-trace parsing, synthetic trace generation and user geolocation.

A trace is kept column-wise (numpy arrays) because the downstream stages
operate on whole columns; iterating a :class:`Trace` yields
:class:`RequestEvent` records for code that wants them one at a time.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from mtecache.errors import ConfigError, DataError, ParseError

log = logging.getLogger(__name__)

FORMATS = ("movielens_ratings", "movielens_100k", "synthetic_csv")
_FORMAT_ALIASES = {"movielens_100k_user": "movielens_100k", "canonical": "synthetic_csv"}
EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True)
class RequestEvent:
    user_id: int
    content_id: int
    timestamp: int


@dataclass
class Trace:
    """Events sorted by timestamp with dense content ids ``1..n_contents``.

    ``content_map[i]`` is the original id of dense content ``i + 1``.
    """

    timestamps: np.ndarray
    user_ids: np.ndarray
    content_ids: np.ndarray
    n_contents: int
    content_map: np.ndarray = field(default=None)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.user_ids = np.asarray(self.user_ids, dtype=np.int64)
        self.content_ids = np.asarray(self.content_ids, dtype=np.int64)
        if self.content_map is None:
            self.content_map = np.arange(1, self.n_contents + 1, dtype=np.int64)
        n = len(self.timestamps)
        if len(self.user_ids) != n or len(self.content_ids) != n:
            raise DataError("trace columns have different lengths")
        if n and (self.content_ids.min() < 1 or self.content_ids.max() > self.n_contents):
            raise DataError("content id outside 1..n_contents")

    def __len__(self):
        return len(self.timestamps)

    def __iter__(self):
        for t, u, c in zip(self.timestamps.tolist(), self.user_ids.tolist(), self.content_ids.tolist()):
            yield RequestEvent(u, c, t)

    @property
    def duration(self):
        return int(self.timestamps[-1]) + 1 if len(self) else 0

    def subset(self, mask):
        return Trace(
            self.timestamps[mask], self.user_ids[mask], self.content_ids[mask],
            self.n_contents, self.content_map,
        )

    @classmethod
    def from_events(cls, events, n_contents=None):
        events = list(events)
        ts = np.array([e.timestamp for e in events], dtype=np.int64)
        us = np.array([e.user_id for e in events], dtype=np.int64)
        cs = np.array([e.content_id for e in events], dtype=np.int64)
        order = np.argsort(ts, kind="stable")
        if n_contents is None:
            n_contents = int(cs.max()) if len(cs) else 0
        return cls(ts[order], us[order], cs[order], n_contents)


# ---------------------------------------------------------------- parsing


def _rows(text, delimiter, header, min_fields, fmt):
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    for lineno, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if lineno == 1 and header:
            continue
        if row[0].startswith("#"):
            continue
        if len(row) < min_fields:
            raise ParseError(f"{fmt}: expected {min_fields} fields, got {len(row)}", lineno)
        yield lineno, row


def _int(value, lineno, what):
    try:
        return int(float(value)) if "." in value or "e" in value.lower() else int(value)
    except ValueError:
        raise ParseError(f"bad {what} {value!r}", lineno) from None


def parse_trace(source, fmt):
    """Parse a byte/text stream into a sorted, densely indexed :class:`Trace`.

    ``movielens_ratings`` is the comma-separated ``userId,movieId,rating,
    timestamp`` file with a header line; ``movielens_100k`` is the
    tab-separated ``user item rating timestamp`` file without header;
    ``synthetic_csv`` is the canonical ``timestamp,user_id,content_id``
    layout written by :func:`serialize_trace`. Ratings are ignored: every
    record counts as one request. For the MovieLens layouts timestamps are
    shifted so the trace starts at zero and content ids are re-indexed
    densely in ascending original-id order. The canonical layout is already
    dense and normalised, so it is read as is.
    """
    fmt = _FORMAT_ALIASES.get(fmt, fmt)
    if fmt not in FORMATS:
        raise ConfigError(f"unknown trace format {fmt!r}; expected one of {FORMATS}")
    if hasattr(source, "read"):
        source = source.read()
    text = source.decode() if isinstance(source, (bytes, bytearray)) else str(source)

    ts, us, cs = [], [], []
    n_declared = None
    if fmt == "synthetic_csv":
        for lineno, row in _rows(text, ",", header=False, min_fields=3, fmt=fmt):
            if row[0] == "timestamp":
                continue
            ts.append(_int(row[0], lineno, "timestamp"))
            us.append(_int(row[1], lineno, "user id"))
            cs.append(_int(row[2], lineno, "content id"))
            if cs[-1] < 1:
                raise ParseError(f"content id must be >= 1, got {cs[-1]}", lineno)
            if ts[-1] < 0:
                raise ParseError(f"negative timestamp {ts[-1]}", lineno)
        for line in text.splitlines():
            if line.startswith("# n_contents="):
                n_declared = int(line.split("=", 1)[1])
    else:
        delimiter, header = ("," , True) if fmt == "movielens_ratings" else ("\t", False)
        for lineno, row in _rows(text, delimiter, header=header, min_fields=4, fmt=fmt):
            us.append(_int(row[0], lineno, "user id"))
            cs.append(_int(row[1], lineno, "content id"))
            ts.append(_int(row[3], lineno, "timestamp"))

    ts = np.array(ts, dtype=np.int64)
    us = np.array(us, dtype=np.int64)
    cs = np.array(cs, dtype=np.int64)
    order = np.argsort(ts, kind="stable")
    ts, us, cs = ts[order], us[order], cs[order]

    if fmt == "synthetic_csv":
        n_c = max(n_declared or 0, int(cs.max()) if len(cs) else 0)
        return Trace(ts, us, cs, n_c)
    if len(ts):
        ts = ts - ts[0]
    originals, dense = np.unique(cs, return_inverse=True)
    return Trace(ts, us, dense.astype(np.int64) + 1, len(originals), originals.astype(np.int64))


def serialize_trace(trace):
    """Canonical ``timestamp,user_id,content_id`` CSV (dense ids)."""
    out = io.StringIO()
    out.write(f"# n_contents={trace.n_contents}\n")
    out.write("timestamp,user_id,content_id\n")
    for t, u, c in zip(trace.timestamps.tolist(), trace.user_ids.tolist(), trace.content_ids.tolist()):
        out.write(f"{t},{u},{c}\n")
    return out.getvalue()


@dataclass(frozen=True)
class UserRecord:
    user_id: int
    age: int
    gender: str
    occupation: str
    zip_code: str


def parse_users(source):
    """Parse a pipe-separated ``user id|age|gender|occupation|zip code`` file."""
    if hasattr(source, "read"):
        source = source.read()
    text = source.decode("latin-1") if isinstance(source, (bytes, bytearray)) else str(source)
    users = []
    for lineno, row in _rows(text, "|", header=False, min_fields=5, fmt="users"):
        users.append(
            UserRecord(_int(row[0], lineno, "user id"), _int(row[1], lineno, "age"), row[2], row[3],
                       row[4].strip())
        )
    return users


def parse_zip_table(source):
    """Parse a ``zip,lat,lon`` CSV (header optional) into a dict."""
    if hasattr(source, "read"):
        source = source.read()
    text = source.decode() if isinstance(source, (bytes, bytearray)) else str(source)
    table = {}
    for lineno, row in _rows(text, ",", header=False, min_fields=3, fmt="zip table"):
        if row[0].strip().lower() == "zip":
            continue
        try:
            table[row[0].strip()] = (float(row[1]), float(row[2]))
        except ValueError:
            raise ParseError(f"bad coordinates {row[1:3]}", lineno) from None
    return table


# ---------------------------------------------------------------- synthetic traces


@dataclass
class SynthConfig:
    n_contents: int = 200
    duration: int = 250 * 600
    n_events: int = 50_000
    zipf_exponent: float = 0.8
    drift_points: tuple = ()
    drift_fraction: float = 1.0
    n_users: int = 1000
    seed: int = 0

    def validate(self):
        errors = []
        if self.n_contents < 1:
            errors.append("n_contents must be >= 1")
        if self.duration < 1:
            errors.append("duration must be >= 1")
        if self.n_events < 0:
            errors.append("n_events must be >= 0")
        if self.zipf_exponent < 0:
            errors.append("zipf_exponent must be >= 0")
        if not 0.0 <= self.drift_fraction <= 1.0:
            errors.append("drift_fraction must be in [0, 1]")
        if self.n_users < 1:
            errors.append("n_users must be >= 1")
        if any(not 0 < p < self.duration for p in self.drift_points):
            errors.append("drift points must lie strictly inside (0, duration)")
        if errors:
            raise ConfigError("; ".join(errors))


def synth_trace(config):
    """Zipf requests over a popularity ranking that reshuffles at drift points.

    Before the first drift point content ``i`` holds rank ``i``. At each
    drift point a random ``drift_fraction`` of the ranks are permuted among
    themselves. Timestamps are uniform integer seconds in ``[0, duration)``
    and users are uniform over ``1..n_users``.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n_c = config.n_contents
    ts = np.sort(rng.integers(0, config.duration, size=config.n_events))
    weights = 1.0 / np.arange(1, n_c + 1, dtype=np.float64) ** config.zipf_exponent
    weights /= weights.sum()
    ranks = rng.choice(n_c, size=config.n_events, p=weights)

    # rank -> content id per epoch between drift points
    owner = np.arange(1, n_c + 1)
    bounds = sorted(config.drift_points)
    epoch = np.searchsorted(np.array(bounds, dtype=np.int64), ts, side="right")
    contents = np.empty(config.n_events, dtype=np.int64)
    for e in range(len(bounds) + 1):
        if e > 0:
            k = int(round(config.drift_fraction * n_c))
            chosen = np.sort(rng.choice(n_c, size=k, replace=False))
            owner[chosen] = owner[rng.permutation(chosen)]
        sel = epoch == e
        contents[sel] = owner[ranks[sel]]
    users = rng.integers(1, config.n_users + 1, size=config.n_events)
    return Trace(ts, users, contents, n_c)


# ---------------------------------------------------------------- geolocation


@dataclass(frozen=True)
class UserGeo:
    user_id: int
    latitude: float
    longitude: float
    indoor: bool = False
    speed: float = 0.0

    def __post_init__(self):
        if not -90 <= self.latitude <= 90 or not -180 <= self.longitude <= 180:
            raise DataError(f"user {self.user_id}: coordinates out of range")
        if self.speed < 0:
            raise DataError(f"user {self.user_id}: negative speed")


@dataclass(frozen=True)
class NodeSite:
    node_id: str
    latitude: float
    longitude: float
    range_m: float


@dataclass
class NodeVicinity:
    node_id: str
    user_ids: frozenset


@dataclass
class GeoResult:
    users: list
    vicinities: list
    fallback_count: int


def fallback_location(zip_code, bounds, seed=0):
    """Deterministic pseudo-location for a ZIP missing from the lookup table."""
    lat_lo, lat_hi, lon_lo, lon_hi = bounds
    digest = hashlib.sha256(f"{seed}:{zip_code}".encode()).digest()
    a = int.from_bytes(digest[:8], "little") / 2**64
    b = int.from_bytes(digest[8:16], "little") / 2**64
    return lat_lo + a * (lat_hi - lat_lo), lon_lo + b * (lon_hi - lon_lo)


def project_local(lat, lon, origin):
    """Equirectangular projection to metres around ``origin = (lat, lon)``."""
    lat0, lon0 = np.radians(origin[0]), np.radians(origin[1])
    x = EARTH_RADIUS_M * (np.radians(lon) - lon0) * np.cos(lat0)
    y = EARTH_RADIUS_M * (np.radians(lat) - lat0)
    return np.stack([np.asarray(x, float), np.asarray(y, float)], axis=-1)


def geolocate_and_assign(users, zip_table, nodes, fallback_bounds=None, seed=0, origin=None):
    """Place users via their ZIP and find which node ranges cover each user.

    ``users`` are :class:`UserRecord` items. Unknown ZIPs get a seeded hash
    position inside ``fallback_bounds`` (``lat_lo, lat_hi, lon_lo, lon_hi``;
    defaults to the bounding box of the table) so no user is dropped.
    Coverage is the closed ball ``distance <= range`` on a local planar
    projection centred at ``origin`` (default: mean node position).
    """
    if fallback_bounds is None:
        if not zip_table:
            raise ConfigError("empty ZIP table and no fallback bounds configured")
        lats = [v[0] for v in zip_table.values()]
        lons = [v[1] for v in zip_table.values()]
        fallback_bounds = (min(lats), max(lats), min(lons), max(lons))
    geo, misses = [], 0
    for u in users:
        loc = zip_table.get(u.zip_code)
        if loc is None:
            misses += 1
            loc = fallback_location(u.zip_code, fallback_bounds, seed)
        geo.append(UserGeo(u.user_id, loc[0], loc[1]))
    if misses:
        log.warning("%d users had unknown ZIP codes; placed by hash fallback", misses)
    if origin is None:
        origin = (
            float(np.mean([n.latitude for n in nodes])) if nodes else 0.0,
            float(np.mean([n.longitude for n in nodes])) if nodes else 0.0,
        )
    vicinities = assign_vicinity(geo, nodes, origin)
    return GeoResult(geo, vicinities, misses)


def assign_vicinity(users, nodes, origin):
    if not users:
        return [NodeVicinity(n.node_id, frozenset()) for n in nodes]
    upos = project_local([u.latitude for u in users], [u.longitude for u in users], origin)
    ids = np.array([u.user_id for u in users])
    out = []
    for n in nodes:
        npos = project_local(n.latitude, n.longitude, origin)
        dist = np.hypot(*(upos - npos).T)
        out.append(NodeVicinity(n.node_id, frozenset(ids[dist <= n.range_m].tolist())))
    return out


def split_by_node(trace, vicinities):
    """Per-node traces: the events issued by users in each node's vicinity."""
    return {
        v.node_id: trace.subset(np.isin(trace.user_ids, np.fromiter(v.user_ids, dtype=np.int64)))
        for v in vicinities
    }
