"""Time-indexed attribute store and its on-disk columnar format.

Each attribute key owns two parallel arrays sorted by timestamp: int64 epoch
seconds and float64 values.  Address events store integer codes into the
store's address vocabulary; non-standard flags store 0.0/1.0.

On disk a store is a directory (conventionally ``*.bns-store``) holding one
``<key>.bin`` file per key plus ``addresses.txt``.  Each key file is::

    b"BNS1" | u16 version | u16 len(key) | key utf-8 | u64 count
    | i64 coverage_lo | i64 coverage_hi | count * <i8 timestamps | count * <f8 values

all little-endian.
"""

from __future__ import annotations

import os
import struct
import tempfile
from functools import cached_property
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import (CHART_KEYS, CHART_SPACING_S, AttributeKey, IngestBatch,
                   SATOSHI_PER_BTC, TxColumns, chart_gaps)
from .errors import CoverageError, InputError

MAGIC = b"BNS1"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<4sHH")
_TAIL = struct.Struct("<Qqq")

CHART_ATTRIBUTE_KEYS = frozenset(CHART_KEYS.values())


def derive_columns(txs: TxColumns) -> dict[AttributeKey, tuple[np.ndarray, np.ndarray]]:
    """Vectorised :func:`bns.data.derive_tx_attributes` over a column batch."""
    t = txs.time
    out = {
        AttributeKey.TX_VALUE: (t, txs.value.astype(np.float64)),
        AttributeKey.TX_SIZE: (t, txs.size.astype(np.float64)),
        AttributeKey.NONSTANDARD_FLAG: (t, txs.nonstandard.astype(np.float64)),
    }
    has_fee = ~txs.coinbase & ~np.isnan(txs.fee)
    fee = txs.fee[has_fee]
    out[AttributeKey.TX_FEES_PAID] = (t[has_fee], fee)
    out[AttributeKey.TX_FEE_RATE] = (t[has_fee], np.round(fee * SATOSHI_PER_BTC) / txs.size[has_fee])
    pct = has_fee & (txs.value > 0)
    out[AttributeKey.TX_FEE_PERCENT] = (t[pct], txs.fee[pct] / txs.value[pct])
    counts = np.diff(txs.addr_offsets)
    out[AttributeKey.ADDRESS_EVENT] = (np.repeat(t, counts), txs.addr_codes.astype(np.float64))
    return out


class AttributeStore:
    """Immutable mapping from attribute key to a timestamped value stream."""

    def __init__(self, series: Mapping[AttributeKey, tuple[np.ndarray, np.ndarray]],
                 coverage: Mapping[AttributeKey, tuple[int, int]] | None = None,
                 addresses: list[str] | None = None) -> None:
        self._ts: dict[AttributeKey, np.ndarray] = {}
        self._vals: dict[AttributeKey, np.ndarray] = {}
        self._cov: dict[AttributeKey, tuple[int, int]] = {}
        for key, (ts, vals) in series.items():
            key = AttributeKey(key)
            ts = np.asarray(ts, dtype=np.int64)
            vals = np.asarray(vals, dtype=np.float64)
            if ts.shape != vals.shape:
                raise ValueError(f"{key.value}: timestamp/value length mismatch")
            order = np.argsort(ts, kind="stable")
            ts, vals = ts[order], vals[order]
            ts.flags.writeable = False
            vals.flags.writeable = False
            self._ts[key], self._vals[key] = ts, vals
            if coverage and key in coverage:
                self._cov[key] = (int(coverage[key][0]), int(coverage[key][1]))
            elif ts.size:
                self._cov[key] = (int(ts[0]), int(ts[-1]))
        self.addresses = list(addresses) if addresses is not None else None

    # ------------------------------------------------------------------ build
    @classmethod
    def from_batch(cls, batch: IngestBatch) -> "AttributeStore":
        series = derive_columns(batch.txs)
        b = batch.blocks
        series[AttributeKey.TX_PER_BLOCK] = (b.time, b.tx_count.astype(np.float64))
        series[AttributeKey.BLOCK_SIZE] = (b.time, b.size_mb.astype(np.float64))
        for chart, (ts, vals) in batch.charts.items():
            series[chart.key] = (ts, vals)

        coverage: dict[AttributeKey, tuple[int, int]] = {}
        if batch.span is not None:
            coverage = {k: batch.span for k in series}
        else:
            if len(b):
                block_span = (int(b.time.min()), int(b.time.max()))
                for k in series:
                    if k not in CHART_ATTRIBUTE_KEYS:
                        coverage[k] = block_span
            for chart, (ts, _) in batch.charts.items():
                if len(ts):
                    coverage[chart.key] = (int(ts[0]), int(ts[-1]) + CHART_SPACING_S)
        return cls(series, coverage, batch.addresses)

    @classmethod
    def from_batches(cls, batches: list[IngestBatch]) -> "AttributeStore":
        """Merge several batches (e.g. one NDJSON file plus chart CSVs)."""
        if len(batches) == 1:
            return cls.from_batch(batches[0])
        parts = [cls.from_batch(b) for b in batches]
        vocab: dict[str, int] = {}
        series: dict[AttributeKey, list[tuple[np.ndarray, np.ndarray]]] = {}
        coverage: dict[AttributeKey, tuple[int, int]] = {}
        for part in parts:
            remap = None
            if part.addresses is not None:
                remap = np.array([vocab.setdefault(a, len(vocab)) for a in part.addresses],
                                 dtype=np.float64)
            for key in part.keys():
                ts, vals = part._ts[key], part._vals[key]
                if key is AttributeKey.ADDRESS_EVENT and remap is not None and vals.size:
                    vals = remap[vals.astype(np.int64)]
                series.setdefault(key, []).append((ts, vals))
                lo, hi = part.coverage(key)
                if key in coverage:
                    lo, hi = min(lo, coverage[key][0]), max(hi, coverage[key][1])
                coverage[key] = (lo, hi)
        merged = {k: (np.concatenate([p[0] for p in v]), np.concatenate([p[1] for p in v]))
                  for k, v in series.items()}
        vocab_list = [""] * len(vocab)
        for a, c in vocab.items():
            vocab_list[c] = a
        return cls(merged, coverage, vocab_list)

    # ---------------------------------------------------------------- queries
    def keys(self) -> list[AttributeKey]:
        return list(self._ts)

    def __contains__(self, key: object) -> bool:
        return key in self._ts

    def timestamps(self, key: AttributeKey) -> np.ndarray:
        return self._ts[AttributeKey(key)]

    def values(self, key: AttributeKey) -> np.ndarray:
        return self._vals[AttributeKey(key)]

    def coverage(self, key: AttributeKey) -> tuple[int, int]:
        key = AttributeKey(key)
        if key not in self._cov:
            raise CoverageError(key.value, float("nan"), float("nan"), float("nan"), float("nan"))
        return self._cov[key]

    @property
    def span(self) -> tuple[int, int]:
        """Intersection of all key coverages."""
        los, his = zip(*self._cov.values())
        return max(los), min(his)

    def check_coverage(self, key: AttributeKey, start: float, end: float) -> None:
        key = AttributeKey(key)
        if not start < end:
            raise ValueError(f"empty window [{start}, {end})")
        if key not in self._cov:
            raise CoverageError(key.value, start, end, float("nan"), float("nan"))
        lo, hi = self._cov[key]
        if start < lo or end > hi:
            raise CoverageError(key.value, start, end, lo, hi)

    def bounds(self, key: AttributeKey, start: float, end: float) -> tuple[int, int]:
        """Index range ``[i, j)`` of records with ``start <= t < end``."""
        self.check_coverage(key, start, end)
        ts = self._ts[AttributeKey(key)]
        return (int(np.searchsorted(ts, start, side="left")),
                int(np.searchsorted(ts, end, side="left")))

    def query_window(self, key: AttributeKey, start: float, end: float) -> np.ndarray:
        i, j = self.bounds(key, start, end)
        return self._vals[AttributeKey(key)][i:j]

    def gaps(self, key: AttributeKey) -> list[tuple[int, int]]:
        key = AttributeKey(key)
        if key not in CHART_ATTRIBUTE_KEYS or key not in self._ts:
            return []
        return chart_gaps(self._ts[key])

    @cached_property
    def address_prev(self) -> np.ndarray:
        """For each address record, index of the previous record with the same
        address, or -1."""
        codes = self._vals.get(AttributeKey.ADDRESS_EVENT)
        if codes is None or codes.size == 0:
            return np.zeros(0, dtype=np.int64)
        # unique composite key (code, position) sorts stably without a stable sort
        n = codes.size
        order = np.argsort(codes.astype(np.int64) * n + np.arange(n, dtype=np.int64))
        prev = np.full(codes.size, -1, dtype=np.int64)
        same = codes[order[1:]] == codes[order[:-1]]
        prev[order[1:][same]] = order[:-1][same]
        return prev

    # ------------------------------------------------------------ persistence
    def save(self, path: str | os.PathLike) -> Path:
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        for key in self._ts:
            atomic_write(root / f"{key.value}.bin", self._encode(key))
        if self.addresses is not None:
            text = "".join(a + "\n" for a in self.addresses)
            atomic_write(root / "addresses.txt", text.encode())
        return root

    def _encode(self, key: AttributeKey) -> bytes:
        name = key.value.encode()
        lo, hi = self._cov.get(key, (0, 0))
        ts, vals = self._ts[key], self._vals[key]
        return b"".join([
            _HEAD.pack(MAGIC, FORMAT_VERSION, len(name)), name,
            _TAIL.pack(ts.size, lo, hi),
            ts.astype("<i8").tobytes(), vals.astype("<f8").tobytes(),
        ])

    @classmethod
    def load(cls, path: str | os.PathLike) -> "AttributeStore":
        root = Path(path)
        if not root.is_dir():
            raise InputError(f"store directory {root} not found")
        series, coverage = {}, {}
        for f in sorted(root.glob("*.bin")):
            key, ts, vals, cov = _decode(f.read_bytes(), f)
            series[key], coverage[key] = (ts, vals), cov
        if not series:
            raise InputError(f"{root} holds no attribute files")
        addresses = None
        if (root / "addresses.txt").exists():
            addresses = (root / "addresses.txt").read_text().splitlines()
        return cls(series, coverage, addresses)


def _decode(buf: bytes, origin: Path) -> tuple[AttributeKey, np.ndarray, np.ndarray, tuple[int, int]]:
    if len(buf) < _HEAD.size:
        raise InputError(f"{origin}: truncated header")
    magic, version, nlen = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise InputError(f"{origin}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise InputError(f"{origin}: unsupported version {version}")
    off = _HEAD.size
    key = AttributeKey(buf[off:off + nlen].decode())
    off += nlen
    count, lo, hi = _TAIL.unpack_from(buf, off)
    off += _TAIL.size
    if len(buf) != off + 16 * count:
        raise InputError(f"{origin}: expected {count} records")
    ts = np.frombuffer(buf, dtype="<i8", count=count, offset=off).astype(np.int64)
    vals = np.frombuffer(buf, dtype="<f8", count=count, offset=off + 8 * count).astype(np.float64)
    return key, ts, vals, (lo, hi)


def atomic_write(path: str | os.PathLike, payload: bytes | str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    if isinstance(payload, str):
        payload = payload.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
