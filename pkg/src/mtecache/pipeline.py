"""From a request trace to labelled, normalised training samples.

The binary request matrix is stored sparsely (the active ``(content,
second)`` pairs) since traces span millions of seconds; ``dense()`` gives
the full ``N_c x T`` grid when it is small enough to want one.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from mtecache.errors import ConfigError, DataError


@dataclass
class RequestMatrix:
    n_contents: int
    n_times: int
    rows: np.ndarray  # 0-based content index of each active entry
    cols: np.ndarray  # second of each active entry

    def dense(self):
        out = np.zeros((self.n_contents, self.n_times), dtype=np.int8)
        out[self.rows, self.cols] = 1
        return out

    @classmethod
    def from_dense(cls, grid):
        grid = np.asarray(grid)
        if not np.isin(grid, (0, 1)).all():
            raise DataError("request matrix entries must be 0 or 1")
        rows, cols = np.nonzero(grid)
        return cls(grid.shape[0], grid.shape[1], rows.astype(np.int64), cols.astype(np.int64))


@dataclass
class WindowedRequests:
    counts: np.ndarray  # N_c x N_w
    window: int

    @property
    def n_windows(self):
        return self.counts.shape[1]


@dataclass
class SampleSet:
    """Segmented samples.

    ``x`` is ``M x N_c x L`` raw window counts, ``y`` the ``M x N_c``
    Top-K labels, ``p_next`` the request-probability vector of the label
    interval and ``start`` the first input interval of each sample.
    """

    x: np.ndarray
    y: np.ndarray
    p_next: np.ndarray
    start: np.ndarray
    k: int

    def __len__(self):
        return self.x.shape[0]

    @property
    def n_contents(self):
        return self.x.shape[1]

    @property
    def lookback(self):
        return self.x.shape[2]

    def take(self, idx):
        idx = np.asarray(idx)
        return SampleSet(self.x[idx], self.y[idx], self.p_next[idx], self.start[idx], self.k)

    def chronological_split(self, fractions=(0.8, 0.1, 0.1)):
        """Train/validation/test split in time order, no shuffling."""
        m = len(self)
        a = int(round(fractions[0] * m))
        b = int(round((fractions[0] + fractions[1]) * m))
        return self.take(np.arange(a)), self.take(np.arange(a, b)), self.take(np.arange(b, m))


# ---------------------------------------------------------------- step 1-2


def build_request_matrix(trace, n_contents, n_times):
    """Binary indicator: entry ``(l, t)`` is 1 if content ``l+1`` was requested at second ``t``."""
    ts, cs = trace.timestamps, trace.content_ids
    bad = np.flatnonzero((ts < 0) | (ts >= n_times) | (cs < 1) | (cs > n_contents))
    if bad.size:
        i = int(bad[0])
        raise DataError(
            f"event #{i} (t={int(ts[i])}, content={int(cs[i])}) outside "
            f"N_c={n_contents}, T={n_times}"
        )
    key = np.unique((cs - 1) * np.int64(n_times) + ts)
    return RequestMatrix(n_contents, n_times, key // n_times, key % n_times)


def window_counts(matrix, window):
    """Sum the active seconds of each content over consecutive windows.

    The trailing partial window is dropped.
    """
    if window < 1:
        raise ConfigError("window must be >= 1")
    n_w = matrix.n_times // window
    if n_w == 0:
        raise ConfigError(f"window {window} exceeds trace length {matrix.n_times}: no full window")
    keep = matrix.cols < n_w * window
    flat = matrix.rows[keep] * n_w + matrix.cols[keep] // window
    counts = np.bincount(flat, minlength=matrix.n_contents * n_w)
    return WindowedRequests(counts.reshape(matrix.n_contents, n_w).astype(np.int64), window)


def window_event_counts(trace, n_contents, window, n_windows=None):
    """Raw request counts per window (no per-second clamping)."""
    if window < 1:
        raise ConfigError("window must be >= 1")
    n_w = n_windows if n_windows is not None else trace.duration // window
    if n_w == 0:
        raise ConfigError("no full window in trace")
    w = trace.timestamps // window
    keep = w < n_w
    flat = (trace.content_ids[keep] - 1) * n_w + w[keep]
    counts = np.bincount(flat, minlength=n_contents * n_w)
    return WindowedRequests(counts.reshape(n_contents, n_w).astype(np.int64), window)


# ---------------------------------------------------------------- step 3-4


def request_probability(counts):
    """Share of each content in the interval's requests; all-zero if there are none."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(total > 0, counts / np.where(total > 0, total, 1.0), 0.0)
    return p


def skewness(timestamps, weights=None):
    """Adjusted Fisher-Pearson sample skewness of request times.

    ``weights`` are integer multiplicities (e.g. per-interval counts when
    ``timestamps`` are interval indices). Fewer than 3 observations or zero
    variance give 0.
    """
    t = np.asarray(timestamps, dtype=np.float64)
    w = np.ones_like(t) if weights is None else np.asarray(weights, dtype=np.float64)
    n = w.sum()
    if n < 3:
        return 0.0
    mu = (w * t).sum() / n
    dev = t - mu
    m2 = (w * dev**2).sum() / n
    if m2 <= 1e-12 * max(1.0, mu * mu):
        return 0.0
    m3 = (w * dev**3).sum() / n
    g1 = m3 / m2**1.5
    return float(np.sqrt(n * (n - 1)) / (n - 2) * g1)


def window_skewness(counts):
    """Row-wise :func:`skewness` of interval indices weighted by ``counts`` (N_c x L)."""
    counts = np.asarray(counts, dtype=np.float64)
    idx = np.arange(counts.shape[-1], dtype=np.float64)
    n = counts.sum(axis=-1)
    safe_n = np.where(n > 0, n, 1.0)
    mu = (counts * idx).sum(axis=-1) / safe_n
    dev = idx - mu[..., None]
    m2 = (counts * dev**2).sum(axis=-1) / safe_n
    m3 = (counts * dev**3).sum(axis=-1) / safe_n
    ok = (n >= 3) & (m2 > 1e-12 * np.maximum(1.0, mu * mu))
    with np.errstate(invalid="ignore", divide="ignore"):
        adj = np.sqrt(n * (n - 1)) / np.where(n > 2, n - 2, 1.0)
        g = np.where(ok, adj * m3 / np.where(ok, m2, 1.0) ** 1.5, 0.0)
    return g


def label_topk(p, zeta, k):
    """Binary Top-K labels.

    Contents are ranked by: negative skew first, then probability
    descending, then lower content id. The first ``k`` get label 1.
    """
    p = np.asarray(p, dtype=np.float64)
    zeta = np.asarray(zeta, dtype=np.float64)
    if p.shape != zeta.shape:
        raise ValueError("p and zeta must have the same length")
    if not 0 <= k <= p.size:
        raise ValueError(f"K={k} outside 0..{p.size}")
    ids = np.arange(p.size)
    order = np.lexsort((ids, -p, (zeta >= 0).astype(np.int8)))
    y = np.zeros(p.size, dtype=np.int8)
    y[order[:k]] = 1
    return y


def segment_samples(windowed, lookback, k, stride=1):
    """Slide a ``lookback``-wide window over the intervals; label the next interval.

    Sample ``u`` covers intervals ``u*stride .. u*stride+lookback-1``. Its
    label uses the request probabilities of interval ``u*stride+lookback``
    and the skewness of each content's requests inside the input span.
    """
    counts = windowed.counts
    n_c, n_w = counts.shape
    if lookback < 1 or stride < 1:
        raise ConfigError("lookback and stride must be >= 1")
    if lookback >= n_w:
        raise ConfigError(f"lookback {lookback} needs at least {lookback + 1} intervals, have {n_w}")
    if not 0 <= k <= n_c:
        raise ConfigError(f"K={k} outside 0..{n_c}")
    m = (n_w - lookback) // stride
    starts = np.arange(m) * stride
    x = np.stack([counts[:, s : s + lookback] for s in starts]).astype(np.float64)
    p_next = request_probability(counts[:, starts + lookback].T)
    zeta = window_skewness(x)
    y = np.stack([label_topk(p_next[u], zeta[u], k) for u in range(m)]) if m else np.zeros((0, n_c), np.int8)
    return SampleSet(x, y, p_next, starts.astype(np.int64), k)


# ---------------------------------------------------------------- model inputs


def minmax_normalize(x, axis=-1):
    """Scale to ``[0, 1]`` along ``axis``; constant slices become 0.

    The default scales each content row of an ``N_c x L`` grid; ``axis=-2``
    scales each time step's ``N_c``-vector instead.
    """
    x = np.asarray(x, dtype=np.float64)
    lo = x.min(axis=axis, keepdims=True)
    span = x.max(axis=axis, keepdims=True) - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(span > 0, (x - lo) / np.where(span > 0, span, 1.0), 0.0)


def gaf_transform(series):
    """Gramian angular summation field of a 1-D series.

    The series is rescaled to ``[-1, 1]`` (a constant series maps to 0),
    then ``G[i, j] = cos(phi_i + phi_j)`` with ``phi = arccos(x)``.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("gaf_transform expects a non-empty 1-D series")
    lo, hi = x.min(), x.max()
    scaled = np.zeros_like(x) if hi == lo else (2.0 * x - hi - lo) / (hi - lo)
    phi = np.arccos(np.clip(scaled, -1.0, 1.0))
    return np.clip(np.cos(phi[:, None] + phi[None, :]), -1.0, 1.0)


def gaf_features(x):
    """Token-grid GAF encoding: each row is replaced by its GASF row-means.

    Keeps the ``... x N_c x L`` shape so the encoder input layout is
    unchanged; values are mapped from ``[-1, 1]`` to ``[0, 1]``.
    """
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1, x.shape[-1])
    out = np.stack([gaf_transform(row).mean(axis=1) for row in flat]) if len(flat) else flat
    return ((out + 1.0) / 2.0).reshape(x.shape)


# ---------------------------------------------------------------- serialisation

SAMPLES_MAGIC = b"MTECSMP\x00"
SAMPLES_VERSION = 1


def dump_samples(samples):
    """Binary layout (little-endian)::

        magic   8 bytes b"MTECSMP\\0"
        version uint32 (1)
        N_c, L, K, M         4 x int64
        start   M int64
        x       M*N_c*L float64   row-major (sample, content, interval)
        y       M*N_c   uint8
        p_next  M*N_c   float64
    """
    m, n_c, length = samples.x.shape
    parts = [
        SAMPLES_MAGIC,
        struct.pack("<I4q", SAMPLES_VERSION, n_c, length, samples.k, m),
        np.ascontiguousarray(samples.start, "<i8").tobytes(),
        np.ascontiguousarray(samples.x, "<f8").tobytes(),
        np.ascontiguousarray(samples.y, "u1").tobytes(),
        np.ascontiguousarray(samples.p_next, "<f8").tobytes(),
    ]
    return b"".join(parts)


def load_samples(blob):
    if blob[:8] != SAMPLES_MAGIC:
        raise DataError("not a sample-set file (bad magic)")
    version, n_c, length, k, m = struct.unpack_from("<I4q", blob, 8)
    if version != SAMPLES_VERSION:
        raise DataError(f"unsupported sample-set version {version}")
    pos = 8 + struct.calcsize("<I4q")

    def take(dtype, count, shape):
        nonlocal pos
        size = np.dtype(dtype).itemsize * count
        arr = np.frombuffer(blob[pos : pos + size], dtype=dtype).reshape(shape).copy()
        pos += size
        return arr

    start = take("<i8", m, (m,))
    x = take("<f8", m * n_c * length, (m, n_c, length))
    y = take("u1", m * n_c, (m, n_c)).astype(np.int8)
    p_next = take("<f8", m * n_c, (m, n_c))
    if pos != len(blob):
        raise DataError("trailing bytes in sample-set file")
    return SampleSet(x, y, p_next, start, int(k))
