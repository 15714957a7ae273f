"""BNS feature vectors: per-window summary statistics in fixed layouts.

Canonical layouts (``LAYOUTS``), version ``LAYOUT_VERSION``:

* ``Full`` (99): the nine statistics ``mean, median, std, kurtosis, skew,
  p10, p25, p75, p90`` for each stream attribute in the order tx_value,
  tx_size, tx_fee_rate, tx_fees_paid, tx_fee_percent, tx_per_second,
  mempool_size, mempool_growth, mempool_count; then the ten tx-value bins;
  then ``mean, median, std`` of tx_per_block and block_size; then
  ``nonstandard.pct`` and ``addresses.unique``.
* ``Overall`` (23): the mean of every stream attribute, tx_per_block and
  block_size, the two single-point features, then the ten bins.
* ``Activity`` (40): tx_per_second, mempool_size, mempool_growth,
  mempool_count (nine stats each), block_size (three), addresses.unique.
* ``Transaction`` (37): the ten bins, then tx_value, tx_size, tx_per_second.
* ``Fee`` (27): tx_fee_rate, tx_fees_paid, tx_fee_percent.

Statistics use population conventions: ``std`` divides by n, ``kurtosis``
is excess kurtosis, percentiles interpolate linearly at rank ``q*(n-1)``.
A single value (or any constant window) has zero skew and kurtosis; an
empty window yields all zeros and is reported as empty.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from .data import AttributeKey
from .errors import CoverageError, InvalidConfig, LayoutError
from .store import AttributeStore

LAYOUT_VERSION = 1

STATS = ("mean", "median", "std", "kurtosis", "skew", "p10", "p25", "p75", "p90")
BLOCK_STATS = ("mean", "median", "std")
_PERCENTILES = {"median": 0.5, "p10": 0.1, "p25": 0.25, "p75": 0.75, "p90": 0.9}

STREAM_KEYS = (
    AttributeKey.TX_VALUE, AttributeKey.TX_SIZE, AttributeKey.TX_FEE_RATE,
    AttributeKey.TX_FEES_PAID, AttributeKey.TX_FEE_PERCENT, AttributeKey.TX_PER_SECOND,
    AttributeKey.MEMPOOL_SIZE, AttributeKey.MEMPOOL_GROWTH, AttributeKey.MEMPOOL_COUNT,
)
BLOCK_KEYS = (AttributeKey.TX_PER_BLOCK, AttributeKey.BLOCK_SIZE)

# Upper edges of the (lo, hi] tx-value bins in BTC; the last bin is open.
VALUE_BIN_EDGES = (1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0, 1e3, 1e4)


def bin_labels(edges: Sequence[float] = VALUE_BIN_EDGES) -> list[str]:
    return [f"bin_le_{e:g}" for e in edges] + [f"bin_gt_{edges[-1]:g}"]


# --------------------------------------------------------------------------
# Summary statistics

@dataclass(frozen=True)
class SummaryStats:
    mean: float = 0.0
    median: float = 0.0
    std: float = 0.0
    kurtosis: float = 0.0
    skew: float = 0.0
    p10: float = 0.0
    p25: float = 0.0
    p75: float = 0.0
    p90: float = 0.0
    empty: bool = False

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, s) for s in STATS)


def _percentile_sorted(s: np.ndarray, q: float) -> float:
    rank = q * (s.size - 1)
    lo = math.floor(rank)
    frac = rank - lo
    a = float(s[lo])
    if frac == 0.0:
        return a
    b = float(s[lo + 1])
    # same two-sided lerp numpy uses, which keeps endpoints exact
    return a + (b - a) * frac if frac < 0.5 else b - (b - a) * (1.0 - frac)


def _stats_sorted(s: np.ndarray) -> tuple[float, ...]:
    """The nine ``STATS`` of an ascending array (zeros when empty)."""
    n = s.size
    if n == 0:
        return (0.0,) * len(STATS)
    pct = {name: _percentile_sorted(s, q) for name, q in _PERCENTILES.items()}
    if s[0] == s[-1]:
        mean, std, kurt, skew = float(s[0]), 0.0, 0.0, 0.0
    else:
        mean = float(s.mean())
        d = s - mean
        # rescale so the higher powers cannot underflow for tiny spreads
        scale = float(np.abs(d).max())
        if scale > 0.0:
            u = d / scale
            u2 = u * u
            m2 = float(u2.mean())
            std = scale * math.sqrt(m2)
            skew = float((u2 * u).mean()) / m2 ** 1.5
            kurt = float((u2 * u2).mean()) / (m2 * m2) - 3.0
        else:
            std = skew = kurt = 0.0
    vals = {"mean": mean, "std": std, "kurtosis": kurt, "skew": skew, **pct}
    return tuple(vals[name] for name in STATS)


def summary_stats(values: Sequence[float] | np.ndarray) -> SummaryStats:
    s = np.sort(np.asarray(values, dtype=np.float64))
    return SummaryStats(*_stats_sorted(s), empty=s.size == 0)


@dataclass(frozen=True)
class ValueDistribution:
    proportions: tuple[float, ...]
    edges: tuple[float, ...] = VALUE_BIN_EDGES


def _bin_index(values: np.ndarray, edges: Sequence[float]) -> np.ndarray:
    # count of edges strictly below v: (lo, hi] bins, zero lands in bin 0
    return np.searchsorted(np.asarray(edges, dtype=np.float64), values, side="left")


def bin_distribution(values: Sequence[float] | np.ndarray,
                     edges: Sequence[float] = VALUE_BIN_EDGES) -> ValueDistribution:
    v = np.asarray(values, dtype=np.float64)
    if v.size and v.min() < 0:
        raise ValueError("transaction values must be non-negative")
    counts = np.bincount(_bin_index(v, edges), minlength=len(edges) + 1)
    if v.size == 0:
        return ValueDistribution(tuple(0.0 for _ in counts), tuple(edges))
    return ValueDistribution(tuple(float(c) / v.size for c in counts), tuple(edges))


# --------------------------------------------------------------------------
# Layouts

class Feature(NamedTuple):
    name: str
    source: str  # attribute key value, "bins", "nonstandard" or "addresses"
    stat: str


class FeatureSetId(str, Enum):
    FULL = "Full"
    OVERALL = "Overall"
    ACTIVITY = "Activity"
    TRANSACTION = "Transaction"
    FEE = "Fee"

    @classmethod
    def parse(cls, text: "str | FeatureSetId") -> "FeatureSetId":
        if isinstance(text, cls):
            return text
        for member in cls:
            if member.value.lower() == str(text).lower():
                return member
        raise InvalidConfig(f"unknown feature set {text!r}; choose from "
                         + ", ".join(m.value for m in cls))


def _stream(key: AttributeKey, stats: Sequence[str] = STATS) -> list[Feature]:
    return [Feature(f"{key.value}.{s}", key.value, s) for s in stats]


def _bins(edges: Sequence[float] = VALUE_BIN_EDGES) -> list[Feature]:
    return [Feature(f"tx_value.{label}", "bins", str(i))
            for i, label in enumerate(bin_labels(edges))]


NONSTANDARD = Feature("nonstandard.pct", "nonstandard", "pct")
ADDRESSES = Feature("addresses.unique", "addresses", "unique")

LAYOUTS: dict[FeatureSetId, tuple[Feature, ...]] = {
    FeatureSetId.FULL: tuple(
        [f for k in STREAM_KEYS for f in _stream(k)]
        + _bins()
        + [f for k in BLOCK_KEYS for f in _stream(k, BLOCK_STATS)]
        + [NONSTANDARD, ADDRESSES]),
    FeatureSetId.OVERALL: tuple(
        [f for k in STREAM_KEYS + BLOCK_KEYS for f in _stream(k, ("mean",))]
        + [NONSTANDARD, ADDRESSES]
        + _bins()),
    FeatureSetId.ACTIVITY: tuple(
        _stream(AttributeKey.TX_PER_SECOND) + _stream(AttributeKey.MEMPOOL_SIZE)
        + _stream(AttributeKey.MEMPOOL_GROWTH) + _stream(AttributeKey.MEMPOOL_COUNT)
        + _stream(AttributeKey.BLOCK_SIZE, BLOCK_STATS) + [ADDRESSES]),
    FeatureSetId.TRANSACTION: tuple(
        _bins() + _stream(AttributeKey.TX_VALUE) + _stream(AttributeKey.TX_SIZE)
        + _stream(AttributeKey.TX_PER_SECOND)),
    FeatureSetId.FEE: tuple(
        _stream(AttributeKey.TX_FEE_RATE) + _stream(AttributeKey.TX_FEES_PAID)
        + _stream(AttributeKey.TX_FEE_PERCENT)),
}

EXPECTED_LENGTHS = {
    FeatureSetId.FULL: 9 * 9 + 10 + 3 * 2 + 2,
    FeatureSetId.OVERALL: 13 + 10,
    FeatureSetId.ACTIVITY: 9 * 4 + 3 + 1,
    FeatureSetId.TRANSACTION: 10 + 9 * 3,
    FeatureSetId.FEE: 3 * 9,
}


def check_layouts() -> None:
    """Startup self-check: layout sizes and subset relations."""
    full = {f.name for f in LAYOUTS[FeatureSetId.FULL]}
    for fs, layout in LAYOUTS.items():
        names = [f.name for f in layout]
        if len(names) != EXPECTED_LENGTHS[fs]:
            raise LayoutError(f"{fs.value}: {len(names)} features, expected {EXPECTED_LENGTHS[fs]}")
        if len(set(names)) != len(names):
            raise LayoutError(f"{fs.value}: duplicate feature names")
        if not set(names) <= full:
            raise LayoutError(f"{fs.value}: features outside the Full layout")
    if [EXPECTED_LENGTHS[f] for f in FeatureSetId] != [99, 23, 40, 37, 27]:
        raise LayoutError("declared layout sizes drifted")


check_layouts()


def feature_names(feature_set: FeatureSetId | str) -> list[str]:
    return [f.name for f in LAYOUTS[FeatureSetId.parse(feature_set)]]


_SPECIAL_SOURCES = {"bins": AttributeKey.TX_VALUE, "nonstandard": AttributeKey.NONSTANDARD_FLAG,
                    "addresses": AttributeKey.ADDRESS_EVENT}


def required_keys(feature_set: FeatureSetId | str) -> list[AttributeKey]:
    """Attribute streams a feature set reads, in a stable order."""
    sources = {f.source for f in LAYOUTS[FeatureSetId.parse(feature_set)]}
    keys = {_SPECIAL_SOURCES.get(s) or AttributeKey(s) for s in sources}
    return sorted(keys, key=lambda k: k.value)


def covers(store: AttributeStore, feature_set: FeatureSetId | str, start: int, end: int) -> bool:
    try:
        for key in required_keys(feature_set):
            store.check_coverage(key, start, end)
    except CoverageError:
        return False
    return True


# --------------------------------------------------------------------------
# Windows and vectors

@dataclass(frozen=True)
class WindowSpec:
    start: int
    end: int

    def __post_init__(self) -> None:
        if not self.end > self.start:
            raise ValueError(f"window end {self.end} must be after start {self.start}")

    @classmethod
    def of(cls, start: float, hours: float) -> "WindowSpec":
        return cls(int(round(start)), int(round(start + hours * 3600)))

    @property
    def length_hours(self) -> float:
        return (self.end - self.start) / 3600


@dataclass(frozen=True)
class BNSVector:
    feature_set: FeatureSetId
    window: WindowSpec
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) != len(LAYOUTS[self.feature_set]):
            raise LayoutError(f"{len(self.values)} values for {self.feature_set.value}")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(feature_names(self.feature_set), self.values))


@dataclass
class Diagnostics:
    """Per-batch notes: windows with no records and chart gaps they overlap."""

    empty_windows: dict[str, int] = field(default_factory=dict)
    gap_windows: dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"empty_windows": dict(sorted(self.empty_windows.items())),
                "gap_windows": dict(sorted(self.gap_windows.items()))}


def _threads() -> int:
    env = os.environ.get("BNS_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


class _SortedWindow:
    """Sorted contents of a sliding index range ``[lo, hi)`` over ``vals``."""

    def __init__(self, vals: np.ndarray) -> None:
        self.vals = vals
        self.lo = self.hi = 0
        self.sorted = vals[:0].copy()

    def move(self, lo: int, hi: int) -> np.ndarray:
        plo, phi = self.lo, self.hi
        delta = abs(lo - plo) + abs(hi - phi)
        if lo >= phi or hi <= plo or 2 * delta > hi - lo:
            self.sorted = np.sort(self.vals[lo:hi])
        else:
            v, s = self.vals, self.sorted
            gone = [v[plo:lo]] if lo > plo else []
            if hi < phi:
                gone.append(v[hi:phi])
            came = [v[lo:plo]] if lo < plo else []
            if hi > phi:
                came.append(v[phi:hi])
            if gone:
                r = np.sort(np.concatenate(gone))
                dup = np.arange(r.size) - np.searchsorted(r, r, side="left")
                s = np.delete(s, np.searchsorted(s, r, side="left") + dup)
            if came:
                a = np.sort(np.concatenate(came))
                s = np.insert(s, np.searchsorted(s, a, side="left"), a)
            self.sorted = s
        self.lo, self.hi = lo, hi
        return self.sorted


def _window_bounds(ts: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return (np.searchsorted(ts, starts, side="left"), np.searchsorted(ts, ends, side="left"))


def _merge_moments(a: tuple, b: tuple) -> tuple:
    """Combine (count, mean, M2, M3, M4) summaries of two disjoint samples."""
    na, ma, a2, a3, a4 = a
    nb, mb, b2, b3, b4 = b
    n = na + nb
    safe = np.where(n > 0, n, 1.0)
    d = mb - ma
    f = na * nb / safe
    mean = np.where(nb == 0, ma, np.where(na == 0, mb, ma + d * nb / safe))
    m2 = a2 + b2 + d * d * f
    m3 = (a3 + b3 + d ** 3 * f * (na - nb) / safe
          + 3.0 * d * (na * b2 - nb * a2) / safe)
    m4 = (a4 + b4 + d ** 4 * f * (na * na - na * nb + nb * nb) / (safe * safe)
          + 6.0 * d * d * (na * na * b2 + nb * nb * a2) / (safe * safe)
          + 4.0 * d * (na * b3 - nb * a3) / safe)
    return n, mean, m2, m3, m4


def _range_moments(vals: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple:
    """Central-moment summaries of ``vals[lo:hi]`` for every window.

    The records are cut into chunks at every window edge; each chunk gets a
    two-pass summary, a power-of-two table of merged chunk runs is built, and
    each window merges the table entries spelling out its length in binary.
    Work is linear in the record count plus logarithmic per window.
    """
    cut = np.unique(np.concatenate([lo, hi]))
    k = cut.size - 1
    ia, ib = np.searchsorted(cut, lo), np.searchsorted(cut, hi)
    if k <= 0:
        z = np.zeros(lo.size)
        return z, z, z, z, z
    counts = np.diff(cut).astype(np.float64)
    seg = vals[cut[0]:cut[-1]]
    starts = cut[:-1] - cut[0]

    def chunk_sum(x: np.ndarray) -> np.ndarray:
        out = np.add.reduceat(np.append(x, 0.0), starts)
        return np.where(counts > 0, out, 0.0)

    safe = np.where(counts > 0, counts, 1.0)
    mean = chunk_sum(seg) / safe
    d = seg - np.repeat(mean, np.diff(cut))
    d2 = d * d
    level = (counts, mean, chunk_sum(d2), chunk_sum(d2 * d), chunk_sum(d2 * d2))
    table = [level]
    span = 1
    while 2 * span <= k:
        prev = table[-1]
        left = tuple(x[:-span] for x in prev)
        right = tuple(x[span:] for x in prev)
        table.append(_merge_moments(left, right))
        span *= 2
    length = ib - ia
    acc = tuple(np.zeros(lo.size) for _ in range(5))
    pos = ia.copy()
    for j in range(len(table) - 1, -1, -1):
        step = 1 << j
        take = (length & step) != 0
        if not take.any():
            continue
        idx = pos[take]
        part = tuple(x[idx] for x in table[j])
        merged = _merge_moments(tuple(x[take] for x in acc), part)
        for x, m in zip(acc, merged):
            x[take] = m
        pos[take] += step
    return acc


# below this the merged third/fourth moments lose all precision
_TINY_VARIANCE = 1e-150


def _stream_stats(vals: np.ndarray, lo: np.ndarray, hi: np.ndarray, order: np.ndarray) -> np.ndarray:
    """``STATS`` per window: percentiles from an exact sliding sorted window,
    moments from merged chunk summaries."""
    out = np.zeros((lo.size, len(STATS)))
    n, mean, m2, m3, m4 = _range_moments(vals, lo, hi)
    col = {name: STATS.index(name) for name in STATS}
    win = _SortedWindow(vals)
    for w in order:
        s = win.move(int(lo[w]), int(hi[w]))
        if s.size == 0:
            continue
        for name, q in _PERCENTILES.items():
            out[w, col[name]] = _percentile_sorted(s, q)
        if s[0] == s[-1]:
            out[w, col["mean"]] = s[0]
            continue
        c2 = m2[w] / n[w]
        if c2 < _TINY_VARIANCE:
            exact = _stats_sorted(s)
            for name in ("mean", "std", "skew", "kurtosis"):
                out[w, col[name]] = exact[col[name]]
            continue
        out[w, col["mean"]] = mean[w]
        out[w, col["std"]] = math.sqrt(c2)
        out[w, col["skew"]] = (m3[w] / n[w]) / c2 ** 1.5
        out[w, col["kurtosis"]] = (m4[w] / n[w]) / (c2 * c2) - 3.0
    return out


def _unique_counts(store: AttributeStore, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Distinct addresses per window.

    A record is the first sighting of its address inside ``[lo, hi)`` exactly
    when its previous sighting precedes ``lo``.  Window edges are snapped to
    a shared boundary grid so the dominance counts come from one 2-D prefix
    table.
    """
    ts = store.timestamps(AttributeKey.ADDRESS_EVENT)
    prev = store.address_prev
    bounds = np.unique(np.concatenate([starts, ends]))
    k = bounds.size
    if k > 4000:
        codes = store.values(AttributeKey.ADDRESS_EVENT)
        lo, hi = _window_bounds(ts, starts, ends)
        return np.array([np.unique(codes[a:b]).size for a, b in zip(lo, hi)], dtype=np.float64)
    keep = ts < bounds[-1]
    seg = np.searchsorted(bounds, ts[keep], side="right")
    p = prev[keep]
    pseg = np.where(p >= 0, np.searchsorted(bounds, ts[np.maximum(p, 0)], side="right"), 0)
    grid = np.bincount(seg * (k + 1) + pseg, minlength=(k + 1) * (k + 1)).reshape(k + 1, k + 1)
    cum = grid.cumsum(axis=0).cumsum(axis=1)
    a = np.searchsorted(bounds, starts)
    b = np.searchsorted(bounds, ends)
    return (cum[b, a] - cum[a, a]).astype(np.float64)


def build_matrix(store: AttributeStore, feature_set: FeatureSetId | str,
                 starts: Sequence[int] | np.ndarray, ends: Sequence[int] | np.ndarray,
                 diagnostics: Diagnostics | None = None) -> np.ndarray:
    """Feature matrix (one row per window) for many windows at once.

    Rows are independent of the other windows in the batch and of thread
    scheduling.
    """
    fs = FeatureSetId.parse(feature_set)
    layout = LAYOUTS[fs]
    starts = np.asarray(starts, dtype=np.int64)
    ends = np.asarray(ends, dtype=np.int64)
    if starts.shape != ends.shape or starts.ndim != 1:
        raise ValueError("starts and ends must be 1-D and equally long")
    if np.any(ends <= starts):
        raise ValueError("every window needs end > start")
    out = np.zeros((starts.size, len(layout)))
    if starts.size == 0:
        return out

    sources = {f.source for f in layout}
    lo_t, hi_t = int(starts.min()), int(ends.max())
    for key in required_keys(fs):
        store.check_coverage(key, lo_t, hi_t)

    order = np.lexsort((ends, starts))
    columns: dict[str, np.ndarray] = {}

    def stream_task(key: AttributeKey) -> None:
        ts, vals = store.timestamps(key), store.values(key)
        lo, hi = _window_bounds(ts, starts, ends)
        if key in BLOCK_KEYS:
            res = np.array([_stats_sorted(np.sort(vals[a:b])) for a, b in zip(lo, hi)]).reshape(-1, len(STATS))
        else:
            res = _stream_stats(vals, lo, hi, order)
        for j, stat in enumerate(STATS):
            columns[f"{key.value}.{stat}"] = res[:, j]
        if diagnostics is not None:
            empty = int(np.count_nonzero(hi == lo))
            if empty:
                diagnostics.empty_windows[key.value] = empty
            gaps = store.gaps(key)
            if gaps:
                g0 = np.array([g[0] for g in gaps])
                g1 = np.array([g[1] for g in gaps])
                hit = [bool(np.any((g1 > s) & (g0 < e))) for s, e in zip(starts, ends)]
                if any(hit):
                    diagnostics.gap_windows[key.value] = int(sum(hit))

    def bins_task() -> None:
        ts = store.timestamps(AttributeKey.TX_VALUE)
        idx = _bin_index(store.values(AttributeKey.TX_VALUE), VALUE_BIN_EDGES)
        lo, hi = _window_bounds(ts, starts, ends)
        n = (hi - lo).astype(np.float64)
        safe = np.where(n > 0, n, 1.0)
        for i, label in enumerate(bin_labels()):
            pos = np.flatnonzero(idx == i)
            c = np.searchsorted(pos, hi) - np.searchsorted(pos, lo)
            columns[f"tx_value.{label}"] = np.where(n > 0, c / safe, 0.0)

    def nonstandard_task() -> None:
        ts = store.timestamps(AttributeKey.NONSTANDARD_FLAG)
        flags = store.values(AttributeKey.NONSTANDARD_FLAG)
        csum = np.concatenate([[0], np.cumsum(flags.astype(np.int64))])
        lo, hi = _window_bounds(ts, starts, ends)
        n = hi - lo
        cnt = csum[hi] - csum[lo]
        columns[NONSTANDARD.name] = np.where(n > 0, 100.0 * cnt / np.where(n > 0, n, 1), 0.0)

    def address_task() -> None:
        columns[ADDRESSES.name] = _unique_counts(store, starts, ends)

    tasks = []
    for key in STREAM_KEYS + BLOCK_KEYS:
        if key.value in sources:
            tasks.append((stream_task, key))
    if "bins" in sources:
        tasks.append((bins_task,))
    if "nonstandard" in sources:
        tasks.append((nonstandard_task,))
    if "addresses" in sources:
        tasks.append((address_task,))

    workers = min(_threads(), len(tasks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for fut in [pool.submit(*t) for t in tasks]:
                fut.result()
    else:
        for t in tasks:
            t[0](*t[1:])

    for j, feat in enumerate(layout):
        out[:, j] = columns[feat.name]
    return out


def window_attribute_values(store: AttributeStore, key: AttributeKey | str, window: WindowSpec) -> list:
    key = AttributeKey(key)
    vals = store.query_window(key, window.start, window.end)
    if key is AttributeKey.ADDRESS_EVENT:
        codes = vals.astype(np.int64)
        if store.addresses is None:
            return codes.tolist()
        return [store.addresses[c] for c in codes]
    if key is AttributeKey.NONSTANDARD_FLAG:
        return vals.astype(np.int64).tolist()
    return vals.tolist()


def build_bns_vector(store: AttributeStore, feature_set: FeatureSetId | str, window: WindowSpec) -> BNSVector:
    fs = FeatureSetId.parse(feature_set)
    row = build_matrix(store, fs, [window.start], [window.end])[0]
    return BNSVector(fs, window, tuple(float(x) for x in row))
