"""Raw blockchain/chart records, their file formats, and per-transaction attributes.

Blocks arrive as newline-delimited JSON, one block per line with its
transactions embedded::

    {"height": 100, "time": 1478678400, "size_mb": 0.99,
     "tx": [{"txid": "..", "time": 1478678390, "value_btc": 1.5, "size_b": 250,
             "fee_btc": 0.0001, "coinbase": false, "nonstandard": false,
             "addresses": ["1abc", "1def"]}]}

Chart series arrive as ``timestamp,value`` CSV, one file per series.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Iterator, Protocol, Sequence

import numpy as np

from .errors import EmptyInput, MalformedRecord, NonMonotonicTimestamps

SATOSHI_PER_BTC = 100_000_000


class AttributeKey(str, Enum):
    TX_VALUE = "tx_value"
    TX_SIZE = "tx_size"
    TX_FEE_RATE = "tx_fee_rate"
    TX_FEES_PAID = "tx_fees_paid"
    TX_FEE_PERCENT = "tx_fee_percent"
    TX_PER_SECOND = "tx_per_second"
    MEMPOOL_SIZE = "mempool_size"
    MEMPOOL_GROWTH = "mempool_growth"
    MEMPOOL_COUNT = "mempool_count"
    TX_PER_BLOCK = "tx_per_block"
    BLOCK_SIZE = "block_size"
    NONSTANDARD_FLAG = "nonstandard_flag"
    ADDRESS_EVENT = "address_event"


class ChartSeries(str, Enum):
    MEMPOOL_SIZE_BYTES = "mempool_size_bytes"
    MEMPOOL_COUNT = "mempool_count"
    MEMPOOL_GROWTH = "mempool_growth_bytes_per_sec"
    TX_PER_SECOND = "tx_per_second"

    @property
    def key(self) -> AttributeKey:
        return CHART_KEYS[self]


CHART_KEYS = {
    ChartSeries.MEMPOOL_SIZE_BYTES: AttributeKey.MEMPOOL_SIZE,
    ChartSeries.MEMPOOL_COUNT: AttributeKey.MEMPOOL_COUNT,
    ChartSeries.MEMPOOL_GROWTH: AttributeKey.MEMPOOL_GROWTH,
    ChartSeries.TX_PER_SECOND: AttributeKey.TX_PER_SECOND,
}

CHART_SPACING_S = 60


@dataclass(frozen=True)
class RawTransaction:
    txid: str
    timestamp: int
    total_output_value: float
    size: int
    fee: float | None
    is_coinbase: bool
    is_nonstandard: bool
    addresses: frozenset[str] = frozenset()
    block_height: int | None = None

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ValueError(f"{self.txid}: size must be >= 1")
        if self.total_output_value < 0:
            raise ValueError(f"{self.txid}: negative output value")
        if self.is_coinbase and self.fee is not None:
            raise ValueError(f"{self.txid}: coinbase transactions carry no fee")
        if self.fee is not None and self.fee < 0:
            raise ValueError(f"{self.txid}: negative fee")


@dataclass(frozen=True)
class RawBlock:
    height: int
    timestamp: int
    size: float  # megabytes
    tx_count: int

    def __post_init__(self) -> None:
        if not self.size > 0:
            raise ValueError(f"block {self.height}: size must be positive")
        if self.tx_count < 1:
            raise ValueError(f"block {self.height}: tx_count must be positive")


@dataclass(frozen=True)
class ChartSample:
    series: ChartSeries
    timestamp: int
    value: float


# --------------------------------------------------------------------------
# Parsing

def _is_int(x: object) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x: object) -> bool:
    return (isinstance(x, (int, float)) and not isinstance(x, bool)
            and math.isfinite(x))


def _parse_tx(obj: object, height: int) -> RawTransaction:
    if not isinstance(obj, dict):
        raise ValueError("transaction is not an object")
    for name in ("txid", "time", "value_btc", "size_b", "coinbase", "nonstandard", "addresses"):
        if name not in obj:
            raise ValueError(f"transaction missing {name!r}")
    if "fee_btc" not in obj:
        raise ValueError("transaction missing 'fee_btc'")
    txid, fee = obj["txid"], obj["fee_btc"]
    if not isinstance(txid, str) or not txid:
        raise ValueError("txid must be a non-empty string")
    if not _is_int(obj["time"]):
        raise ValueError(f"{txid}: time must be an integer")
    if not _is_num(obj["value_btc"]) or obj["value_btc"] < 0:
        raise ValueError(f"{txid}: value_btc must be a non-negative number")
    if not _is_int(obj["size_b"]) or obj["size_b"] < 1:
        raise ValueError(f"{txid}: size_b must be a positive integer")
    if not isinstance(obj["coinbase"], bool) or not isinstance(obj["nonstandard"], bool):
        raise ValueError(f"{txid}: coinbase/nonstandard must be booleans")
    if obj["coinbase"]:
        if fee is not None:
            raise ValueError(f"{txid}: coinbase transaction with a fee")
    elif fee is None:
        raise ValueError(f"{txid}: fee_btc required for non-coinbase transactions")
    elif not _is_num(fee) or fee < 0:
        raise ValueError(f"{txid}: fee_btc must be a non-negative number")
    addrs = obj["addresses"]
    if not isinstance(addrs, list) or not all(isinstance(a, str) for a in addrs):
        raise ValueError(f"{txid}: addresses must be a list of strings")
    return RawTransaction(
        txid=txid,
        timestamp=obj["time"],
        total_output_value=float(obj["value_btc"]),
        size=obj["size_b"],
        fee=None if fee is None else float(fee),
        is_coinbase=obj["coinbase"],
        is_nonstandard=obj["nonstandard"],
        addresses=frozenset(addrs),
        block_height=height,
    )


def _parse_block_line(text: str) -> tuple[RawBlock, list[RawTransaction]]:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise ValueError("line is not a JSON object")
    for name in ("height", "time", "size_mb", "tx"):
        if name not in obj:
            raise ValueError(f"missing {name!r}")
    if not _is_int(obj["height"]) or not _is_int(obj["time"]):
        raise ValueError("height and time must be integers")
    if not _is_num(obj["size_mb"]) or obj["size_mb"] <= 0:
        raise ValueError("size_mb must be a positive number")
    if not isinstance(obj["tx"], list) or not obj["tx"]:
        raise ValueError("tx must be a non-empty list")
    txs = [_parse_tx(t, obj["height"]) for t in obj["tx"]]
    block = RawBlock(obj["height"], obj["time"], float(obj["size_mb"]), len(txs))
    return block, txs


def parse_block_records(stream: Iterable[str]) -> tuple[list[RawBlock], list[RawTransaction]]:
    """Parse block NDJSON.

    Every malformed line is collected; if any exist a single
    :class:`MalformedRecord` is raised for the first one, with the full list
    on ``.problems``.
    """
    blocks: list[RawBlock] = []
    txs: list[RawTransaction] = []
    problems: list[tuple[int, str]] = []
    for lineno, raw in enumerate(stream, start=1):
        text = raw.strip()
        if not text:
            continue
        try:
            block, block_txs = _parse_block_line(text)
        except ValueError as exc:
            problems.append((lineno, str(exc)))
            continue
        if blocks and block.height <= blocks[-1].height:
            problems.append((lineno, f"height {block.height} not above {blocks[-1].height}"))
            continue
        blocks.append(block)
        txs.extend(block_txs)
    if problems:
        err = MalformedRecord(*problems[0])
        err.problems = problems
        raise err
    if not blocks:
        raise EmptyInput("no block records found")
    return blocks, txs


def parse_chart_series(stream: Iterable[str], series: ChartSeries | str) -> list[ChartSample]:
    series = ChartSeries(series)
    samples: list[ChartSample] = []
    for lineno, row in enumerate(csv.reader(stream), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise MalformedRecord(lineno, f"expected 2 columns, got {len(row)}")
        try:
            ts_f, value = float(row[0]), float(row[1])
        except ValueError:
            if lineno == 1 and not samples:
                continue  # header
            raise MalformedRecord(lineno, f"non-numeric row {row!r}") from None
        if not (math.isfinite(ts_f) and ts_f == int(ts_f)):
            raise MalformedRecord(lineno, f"timestamp {row[0]!r} is not an integer")
        if not math.isfinite(value):
            raise MalformedRecord(lineno, f"value {row[1]!r} is not finite")
        if value < 0 and series is not ChartSeries.MEMPOOL_GROWTH:
            raise MalformedRecord(lineno, f"negative value for {series.value}")
        ts = int(ts_f)
        if samples and ts <= samples[-1].timestamp:
            raise NonMonotonicTimestamps(lineno, samples[-1].timestamp, ts)
        samples.append(ChartSample(series, ts, value))
    if not samples:
        raise EmptyInput(f"no samples for {series.value}")
    return samples


def chart_gaps(timestamps: Sequence[int] | np.ndarray, spacing: int = CHART_SPACING_S) -> list[tuple[int, int]]:
    """Return ``(after, before)`` pairs bracketing runs of missing samples."""
    ts = np.asarray(timestamps, dtype=np.int64)
    if ts.size < 2:
        return []
    idx = np.nonzero(np.diff(ts) > 1.5 * spacing)[0]
    return [(int(ts[i]), int(ts[i + 1])) for i in idx]


# --------------------------------------------------------------------------
# Emitting (inverse of parsing)

def tx_to_json(tx: RawTransaction) -> dict:
    return {
        "txid": tx.txid,
        "time": tx.timestamp,
        "value_btc": tx.total_output_value,
        "size_b": tx.size,
        "fee_btc": tx.fee,
        "coinbase": tx.is_coinbase,
        "nonstandard": tx.is_nonstandard,
        "addresses": sorted(tx.addresses),
    }


def emit_block_records(blocks: Sequence[RawBlock], txs: Iterable[RawTransaction]) -> Iterator[str]:
    """Yield NDJSON lines; transactions are grouped onto their block by height."""
    by_height: dict[int, list[RawTransaction]] = {}
    for tx in txs:
        by_height.setdefault(tx.block_height, []).append(tx)
    for b in blocks:
        line = {"height": b.height, "time": b.timestamp, "size_mb": b.size,
                "tx": [tx_to_json(t) for t in by_height.get(b.height, [])]}
        yield json.dumps(line, separators=(",", ":")) + "\n"


def emit_chart_series(samples: Iterable[ChartSample]) -> str:
    out = io.StringIO()
    out.write("timestamp,value\n")
    for s in samples:
        out.write(f"{s.timestamp},{s.value!r}\n")
    return out.getvalue()


# --------------------------------------------------------------------------
# Attribute derivation

def parse_time(value: int | float | str) -> int:
    """Epoch seconds from an integer or an ISO-8601 string (UTC when no offset)."""
    if isinstance(value, str):
        text = value.strip()
        if text.lstrip("-").isdigit():
            return int(text)
        try:
            dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
        except ValueError:
            raise ValueError(f"not an ISO-8601 time: {value!r}") from None
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return int(dt.timestamp())
    if isinstance(value, bool) or not float(value).is_integer():
        raise ValueError(f"not a whole-second timestamp: {value!r}")
    return int(value)


def format_time(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def fee_in_satoshi(fee_btc: float) -> int:
    return int(round(fee_btc * SATOSHI_PER_BTC))


def derive_tx_attributes(tx: RawTransaction) -> set[tuple[AttributeKey, int, object]]:
    t = tx.timestamp
    out: set[tuple[AttributeKey, int, object]] = {
        (AttributeKey.TX_VALUE, t, tx.total_output_value),
        (AttributeKey.TX_SIZE, t, float(tx.size)),
        (AttributeKey.NONSTANDARD_FLAG, t, bool(tx.is_nonstandard)),
    }
    if not tx.is_coinbase and tx.fee is not None:
        out.add((AttributeKey.TX_FEES_PAID, t, tx.fee))
        out.add((AttributeKey.TX_FEE_RATE, t, fee_in_satoshi(tx.fee) / tx.size))
        if tx.total_output_value > 0:
            out.add((AttributeKey.TX_FEE_PERCENT, t, tx.fee / tx.total_output_value))
    for addr in tx.addresses:
        out.add((AttributeKey.ADDRESS_EVENT, t, addr))
    return out


# --------------------------------------------------------------------------
# Columnar batches

@dataclass
class BlockColumns:
    height: np.ndarray
    time: np.ndarray
    size_mb: np.ndarray
    tx_count: np.ndarray

    def __len__(self) -> int:
        return int(self.height.size)


@dataclass
class TxColumns:
    txid: list[str]
    time: np.ndarray
    value: np.ndarray
    size: np.ndarray
    fee: np.ndarray  # NaN where absent
    coinbase: np.ndarray
    nonstandard: np.ndarray
    block_height: np.ndarray  # -1 when unconfirmed
    addr_offsets: np.ndarray  # len n+1, CSR layout into addr_codes
    addr_codes: np.ndarray

    def __len__(self) -> int:
        return len(self.txid)

    @classmethod
    def empty(cls) -> "TxColumns":
        return cls([], np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64),
                   np.zeros(0), np.zeros(0, bool), np.zeros(0, bool),
                   np.zeros(0, np.int64), np.zeros(1, np.int64), np.zeros(0, np.int64))


@dataclass
class IngestBatch:
    """A sealed batch of ingested records in column form.

    ``addresses`` is the vocabulary mapping address codes to strings.
    ``span`` is the declared time range the batch describes, when known;
    ``pending`` holds transactions still unconfirmed at the end of the span.
    """

    blocks: BlockColumns
    txs: TxColumns
    charts: dict[ChartSeries, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    addresses: list[str] = field(default_factory=list)
    span: tuple[int, int] | None = None
    pending: TxColumns = field(default_factory=TxColumns.empty)

    @classmethod
    def from_records(cls, blocks: Sequence[RawBlock], txs: Sequence[RawTransaction],
                     charts: Iterable[Sequence[ChartSample]] = (),
                     span: tuple[int, int] | None = None) -> "IngestBatch":
        vocab: dict[str, int] = {}
        offsets = [0]
        codes: list[int] = []
        for tx in txs:
            for a in sorted(tx.addresses):
                codes.append(vocab.setdefault(a, len(vocab)))
            offsets.append(len(codes))
        tcols = TxColumns(
            txid=[t.txid for t in txs],
            time=np.array([t.timestamp for t in txs], dtype=np.int64),
            value=np.array([t.total_output_value for t in txs], dtype=np.float64),
            size=np.array([t.size for t in txs], dtype=np.int64),
            fee=np.array([np.nan if t.fee is None else t.fee for t in txs], dtype=np.float64),
            coinbase=np.array([t.is_coinbase for t in txs], dtype=bool),
            nonstandard=np.array([t.is_nonstandard for t in txs], dtype=bool),
            block_height=np.array([-1 if t.block_height is None else t.block_height for t in txs],
                                  dtype=np.int64),
            addr_offsets=np.array(offsets, dtype=np.int64),
            addr_codes=np.array(codes, dtype=np.int64),
        )
        bcols = BlockColumns(
            height=np.array([b.height for b in blocks], dtype=np.int64),
            time=np.array([b.timestamp for b in blocks], dtype=np.int64),
            size_mb=np.array([b.size for b in blocks], dtype=np.float64),
            tx_count=np.array([b.tx_count for b in blocks], dtype=np.int64),
        )
        chart_cols = {}
        for samples in charts:
            if not samples:
                continue
            chart_cols[samples[0].series] = (
                np.array([s.timestamp for s in samples], dtype=np.int64),
                np.array([s.value for s in samples], dtype=np.float64),
            )
        vocab_list = [""] * len(vocab)
        for a, c in vocab.items():
            vocab_list[c] = a
        return cls(bcols, tcols, chart_cols, vocab_list, span)

    def raw_blocks(self) -> list[RawBlock]:
        b = self.blocks
        return [RawBlock(int(h), int(t), float(s), int(c))
                for h, t, s, c in zip(b.height, b.time, b.size_mb, b.tx_count)]

    def raw_transactions(self, pending: bool = False) -> Iterator[RawTransaction]:
        t = self.pending if pending else self.txs
        for i in range(len(t)):
            lo, hi = t.addr_offsets[i], t.addr_offsets[i + 1]
            fee = t.fee[i]
            yield RawTransaction(
                txid=t.txid[i],
                timestamp=int(t.time[i]),
                total_output_value=float(t.value[i]),
                size=int(t.size[i]),
                fee=None if np.isnan(fee) else float(fee),
                is_coinbase=bool(t.coinbase[i]),
                is_nonstandard=bool(t.nonstandard[i]),
                addresses=frozenset(self.addresses[c] for c in t.addr_codes[lo:hi]),
                block_height=None if t.block_height[i] < 0 else int(t.block_height[i]),
            )

    def chart_samples(self, series: ChartSeries) -> list[ChartSample]:
        ts, vals = self.charts[series]
        return [ChartSample(series, int(a), float(v)) for a, v in zip(ts, vals)]


class RemoteFetcher(Protocol):
    """Source of raw records by height or date range.

    No network client ships with the package; implementations only need to
    return the same record types the file parsers produce.
    """

    def get_blocks(self, start_height: int, end_height: int) -> tuple[list[RawBlock], list[RawTransaction]]:
        ...

    def get_chart(self, series: ChartSeries, start: int, end: int) -> list[ChartSample]:
        ...


class FileFetcher:
    """:class:`RemoteFetcher` over a directory written by ``bns synth``."""

    def __init__(self, root) -> None:
        from pathlib import Path
        self.root = Path(root)

    def get_blocks(self, start_height: int, end_height: int) -> tuple[list[RawBlock], list[RawTransaction]]:
        with open(self.root / "blocks.ndjson") as fh:
            blocks, txs = parse_block_records(fh)
        keep = [b for b in blocks if start_height <= b.height < end_height]
        heights = {b.height for b in keep}
        return keep, [t for t in txs if t.block_height in heights]

    def get_chart(self, series: ChartSeries, start: int, end: int) -> list[ChartSample]:
        series = ChartSeries(series)
        with open(self.root / f"chart_{series.value}.csv") as fh:
            samples = parse_chart_series(fh, series)
        return [s for s in samples if start <= s.timestamp < end]
