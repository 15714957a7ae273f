"""Seeded synthetic blockchain and mempool generator.

Transactions arrive as an inhomogeneous Poisson process whose rate, like
every other time-varying parameter, is the base :class:`SynthParams` value
modified by any active :class:`EventEffect`.  Blocks arrive as a second
Poisson process (exponential intervals) and drain the mempool in strict
fee-rate order, FIFO among equal rates, stopping at the first transaction
that does not fit.  Chart series are exact reads of the queue state each
minute.

Addresses follow a Simon process: each address slot is a fresh address
with probability ``new_address_prob`` and otherwise repeats the address of
a uniformly chosen earlier slot, which gives preferential reuse.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import (SATOSHI_PER_BTC, BlockColumns, ChartSeries, IngestBatch,
                   TxColumns, emit_block_records, emit_chart_series, parse_time,
                   tx_to_json)
from .errors import InvalidParams
from .store import atomic_write

MINUTE = 60
COINBASE_SIZE = 200
MINER_POOL = 16

# parameters an EventEffect may modify over time
VARYING = ("tx_rate", "value_mu", "value_sigma", "size_median", "size_sigma",
           "fee_rate_median", "fee_rate_sigma", "nonstandard_prob",
           "new_address_prob", "block_interval", "block_cap")


@dataclass(frozen=True)
class SynthParams:
    seed: int = 0
    start: int = 1_483_228_800  # 2017-01-01T00:00:00Z
    duration_days: float = 30.0
    tx_rate: float = 3.0  # tx/s
    value_mu: float = -2.0  # log BTC
    value_sigma: float = 2.0
    size_median: float = 250.0  # bytes
    size_sigma: float = 0.6
    size_min: int = 100
    size_max: int = 100_000
    fee_rate_median: float = 20.0  # satoshi/byte
    fee_rate_sigma: float = 0.7
    block_interval: float = 600.0  # mean seconds
    block_cap: float = 1.0  # MB
    nonstandard_prob: float = 0.001
    addresses_base: int = 2
    addresses_extra_n: int = 4
    addresses_extra_p: float = 0.25
    new_address_prob: float = 0.2
    coinbase_reward: float = 12.5
    start_height: int = 400_000
    chart_noise: float = 0.0  # relative Gaussian noise on chart reads

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2 ** 64:
            raise InvalidParams("seed must be a 64-bit unsigned integer")
        for name in ("duration_days", "tx_rate", "value_sigma", "size_median", "size_sigma",
                     "fee_rate_median", "fee_rate_sigma", "block_interval", "block_cap",
                     "new_address_prob"):
            if not getattr(self, name) > 0:
                raise InvalidParams(f"{name} must be positive")
        if not 0 <= self.nonstandard_prob <= 1 or not 0 < self.new_address_prob <= 1:
            raise InvalidParams("probabilities must lie in [0, 1]")
        if not 0 <= self.addresses_extra_p <= 1 or self.addresses_extra_n < 0 or self.addresses_base < 1:
            raise InvalidParams("invalid addresses-per-transaction distribution")
        if not 1 <= self.size_min <= self.size_max:
            raise InvalidParams("size bounds must satisfy 1 <= size_min <= size_max")
        if self.block_cap * 1e6 <= self.size_max + COINBASE_SIZE:
            raise InvalidParams("block_cap must exceed the largest possible transaction")
        if self.chart_noise < 0 or self.coinbase_reward < 0:
            raise InvalidParams("chart_noise and coinbase_reward must be non-negative")
        if self.duration_seconds % MINUTE:
            raise InvalidParams("duration must be a whole number of minutes")

    @property
    def duration_seconds(self) -> int:
        return int(round(self.duration_days * 86400))

    @property
    def end(self) -> int:
        return self.start + self.duration_seconds

    def at_day(self, day: float) -> int:
        return self.start + int(round(day * 86400))

    @classmethod
    def from_dict(cls, d: dict) -> "SynthParams":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise InvalidParams(f"unknown parameters: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class EventEffect:
    """A change to generator parameters starting at ``onset``.

    The effect ramps linearly from nothing to full strength over ``ramp_hours``
    (0 gives a step) and switches off ``duration_hours`` after onset, or never
    when ``duration_hours`` is None.  ``multipliers`` scale a parameter and
    ``shifts`` add to it.
    """

    onset: int | str
    ramp_hours: float = 0.0
    duration_hours: float | None = None
    multipliers: dict[str, float] = field(default_factory=dict)
    shifts: dict[str, float] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "onset", parse_time(self.onset))
        except ValueError as exc:
            raise InvalidParams(str(exc)) from None
        if self.ramp_hours < 0:
            raise InvalidParams("ramp_hours must be non-negative")
        if self.duration_hours is not None and self.duration_hours <= 0:
            raise InvalidParams("duration_hours must be positive")
        for name, m in self.multipliers.items():
            if name not in VARYING:
                raise InvalidParams(f"{name} cannot vary over time")
            if not m > 0:
                raise InvalidParams(f"multiplier for {name} must be positive")
        for name in self.shifts:
            if name not in VARYING:
                raise InvalidParams(f"{name} cannot vary over time")

    def weight(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        dt = t - self.onset
        ramp = self.ramp_hours * 3600
        w = np.where(dt < 0, 0.0, 1.0)
        if ramp > 0:
            w = np.clip(dt / ramp, 0.0, 1.0)
        if self.duration_hours is not None:
            w = np.where(dt >= self.duration_hours * 3600, 0.0, w)
        return w

    def as_dict(self) -> dict:
        return asdict(self)


def param_at(params: SynthParams, effects: Sequence[EventEffect], name: str,
             t: np.ndarray) -> np.ndarray:
    """Value of a time-varying parameter at each time in ``t``."""
    t = np.asarray(t, dtype=np.float64)
    mult = np.ones_like(t)
    shift = np.zeros_like(t)
    for e in effects:
        if name in e.multipliers or name in e.shifts:
            w = e.weight(t)
            if name in e.multipliers:
                mult *= 1.0 + (e.multipliers[name] - 1.0) * w
            if name in e.shifts:
                shift += e.shifts[name] * w
    return getattr(params, name) * mult + shift


def _poisson_times(rng: np.random.Generator, rate_per_s: np.ndarray, t0: int) -> np.ndarray:
    """Arrival times of a Poisson process with piecewise-constant per-minute
    rates, by time rescaling of a unit-rate process."""
    lam = np.concatenate([[0.0], np.cumsum(rate_per_s * MINUTE)])
    n = rng.poisson(lam[-1])
    u = np.sort(rng.uniform(0.0, lam[-1], n))
    grid = t0 + MINUTE * np.arange(lam.size, dtype=np.float64)
    return np.interp(u, lam, grid)


def _simon_addresses(rng: np.random.Generator, p_new: np.ndarray) -> tuple[np.ndarray, int]:
    """Address id for each slot; returns (ids, number of distinct addresses)."""
    m = p_new.size
    if m == 0:
        return np.zeros(0, np.int64), 0
    idx = np.arange(m, dtype=np.int64)
    new = rng.random(m) < p_new
    new[0] = True
    parent = np.where(new, idx, np.floor(rng.random(m) * idx).astype(np.int64))
    while True:
        nxt = parent[parent]
        if np.array_equal(nxt, parent):
            break
        parent = nxt
    ids = np.cumsum(new) - 1
    return ids[parent], int(new.sum())


def _csr_unique(owner: np.ndarray, codes: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-owner sorted distinct codes in CSR form."""
    order = np.lexsort((codes, owner))
    o, c = owner[order], codes[order]
    keep = np.ones(o.size, bool)
    keep[1:] = (o[1:] != o[:-1]) | (c[1:] != c[:-1])
    o, c = o[keep], c[keep]
    offsets = np.zeros(n + 1, np.int64)
    np.cumsum(np.bincount(o, minlength=n), out=offsets[1:])
    return offsets, c


def _txids(rng: np.random.Generator, n: int) -> list[str]:
    raw = rng.bytes(32 * n).hex()
    return [raw[64 * i: 64 * i + 64] for i in range(n)]


def _take(cols: TxColumns, idx: np.ndarray) -> TxColumns:
    counts = np.diff(cols.addr_offsets)[idx]
    offsets = np.zeros(idx.size + 1, np.int64)
    np.cumsum(counts, out=offsets[1:])
    starts = cols.addr_offsets[idx]
    gather = np.repeat(starts - offsets[:-1], counts) + np.arange(offsets[-1])
    return TxColumns([cols.txid[i] for i in idx], cols.time[idx], cols.value[idx], cols.size[idx],
                     cols.fee[idx], cols.coinbase[idx], cols.nonstandard[idx],
                     cols.block_height[idx], offsets, cols.addr_codes[gather])


def _fill_blocks(rank: np.ndarray, size: np.ndarray, arrival: np.ndarray,
                 block_times: np.ndarray, caps: np.ndarray, size_min: int) -> np.ndarray:
    """Block index for every transaction (-1 when still pending at the end).

    ``rank`` is each transaction's position in global priority order.  The
    pending pool is a large sorted array consumed from the front plus a small
    sorted buffer of recent arrivals, merged when the buffer grows.
    """
    n = rank.size
    by_rank = np.empty(n, np.int64)
    by_rank[rank] = np.arange(n)
    size_by_rank = size[by_rank]
    block_of = np.full(n, -1, np.int64)
    main = np.zeros(0, np.int64)
    mstart = 0
    buf = np.zeros(0, np.int64)
    ptr = 0
    for b, (tb, cap) in enumerate(zip(block_times, caps)):
        nxt = int(np.searchsorted(arrival, tb, side="right"))
        if nxt > ptr:
            fresh = np.sort(rank[ptr:nxt])
            buf = fresh if buf.size == 0 else np.insert(buf, np.searchsorted(buf, fresh), fresh)
            ptr = nxt
            if buf.size > 65536:
                main = np.sort(np.concatenate([main[mstart:], buf]), kind="stable")
                mstart, buf = 0, np.zeros(0, np.int64)
        avail = cap - COINBASE_SIZE
        k = avail // size_min + 1
        head = np.sort(np.concatenate([main[mstart:mstart + k], buf[:k]]))
        if head.size == 0:
            continue
        fits = np.cumsum(size_by_rank[head]) <= avail
        c = int(np.argmin(fits)) if not fits.all() else head.size
        if c == 0:
            continue
        cut = head[c - 1]
        cm = int(np.searchsorted(main[mstart:mstart + k], cut, side="right"))
        cb = int(np.searchsorted(buf[:k], cut, side="right"))
        block_of[by_rank[head[:c]]] = b
        mstart += cm
        buf = buf[cb:]
    return block_of


def generate(params: SynthParams, effects: Sequence[EventEffect] = ()) -> IngestBatch:
    """Simulate ``params.duration_days`` of chain and mempool activity."""
    effects = list(effects)
    t0, t1 = params.start, params.end
    for e in effects:
        if not t0 <= e.onset < t1:
            raise InvalidParams(f"effect onset {e.onset} outside [{t0}, {t1})")
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(params.seed).spawn(7)]
    r_arr, r_tx, r_addr, r_blk, r_id, r_cb, r_noise = streams

    n_min = params.duration_seconds // MINUTE
    mids = t0 + MINUTE * (np.arange(n_min) + 0.5)

    def at(name: str, t: np.ndarray) -> np.ndarray:
        return param_at(params, effects, name, t)

    rate = at("tx_rate", mids)
    if np.any(rate <= 0):
        raise InvalidParams("effective tx_rate must stay positive")
    t_cont = _poisson_times(r_arr, rate, t0)
    arrival = np.minimum(np.floor(t_cont).astype(np.int64), t1 - 1)
    n = arrival.size

    z = r_tx.standard_normal((3, n))
    value = np.exp(at("value_mu", t_cont) + at("value_sigma", t_cont) * z[0])
    value_sat = np.maximum(np.rint(value * SATOSHI_PER_BTC), 1.0)
    size = np.exp(np.log(at("size_median", t_cont)) + at("size_sigma", t_cont) * z[1])
    size = np.clip(np.rint(size), params.size_min, params.size_max).astype(np.int64)
    fee_rate = np.exp(np.log(at("fee_rate_median", t_cont)) + at("fee_rate_sigma", t_cont) * z[2])
    fee_sat = np.maximum(np.rint(fee_rate * size), 1.0)
    nonstandard = r_tx.random(n) < np.clip(at("nonstandard_prob", t_cont), 0.0, 1.0)
    n_addr = params.addresses_base + r_tx.binomial(params.addresses_extra_n,
                                                   params.addresses_extra_p, n)

    owner = np.repeat(np.arange(n, dtype=np.int64), n_addr)
    p_new = np.clip(at("new_address_prob", t_cont[owner]), 1e-9, 1.0)
    slot_ids, n_pool = _simon_addresses(r_addr, p_new)

    # blocks
    b_rate = 1.0 / at("block_interval", mids)
    b_times = np.minimum(np.floor(_poisson_times(r_blk, b_rate, t0)).astype(np.int64), t1 - 1)
    n_blocks = b_times.size
    caps = np.floor(at("block_cap", b_times.astype(np.float64)) * 1e6).astype(np.int64)
    if np.any(caps <= params.size_max + COINBASE_SIZE):
        raise InvalidParams("effective block_cap must exceed the largest transaction")

    # priority: higher satoshi/byte first, earlier arrival on ties
    order = np.lexsort((np.arange(n), -(fee_sat / size)))
    rank = np.empty(n, np.int64)
    rank[order] = np.arange(n)
    block_of = _fill_blocks(rank, size, arrival, b_times, caps, params.size_min)

    # coinbase transactions, one per block
    conf = block_of >= 0
    fees_per_block = np.bincount(block_of[conf], weights=fee_sat[conf], minlength=n_blocks)
    cnt_per_block = np.bincount(block_of[conf], minlength=n_blocks)
    bytes_per_block = np.bincount(block_of[conf], weights=size[conf], minlength=n_blocks)
    reward_sat = round(params.coinbase_reward * SATOSHI_PER_BTC)
    miners = r_cb.integers(0, MINER_POOL, n_blocks)

    ids = _txids(r_id, n + n_blocks)
    all_owner = np.concatenate([owner, n + np.arange(n_blocks)])
    all_codes = np.concatenate([slot_ids, n_pool + miners])
    offsets, codes = _csr_unique(all_owner, all_codes, n + n_blocks)
    heights = params.start_height + np.arange(n_blocks, dtype=np.int64)
    everything = TxColumns(
        txid=ids,
        time=np.concatenate([arrival, b_times]),
        value=np.concatenate([value_sat, reward_sat + fees_per_block]) / SATOSHI_PER_BTC,
        size=np.concatenate([size, np.full(n_blocks, COINBASE_SIZE, np.int64)]),
        fee=np.concatenate([fee_sat / SATOSHI_PER_BTC, np.full(n_blocks, np.nan)]),
        coinbase=np.concatenate([np.zeros(n, bool), np.ones(n_blocks, bool)]),
        nonstandard=np.concatenate([nonstandard, np.zeros(n_blocks, bool)]),
        block_height=np.concatenate([np.where(conf, params.start_height + block_of, -1), heights]),
        addr_offsets=offsets,
        addr_codes=codes,
    )
    # confirmed: grouped by block, coinbase first, then priority order
    conf_idx = np.flatnonzero(conf)
    conf_idx = conf_idx[np.lexsort((rank[conf_idx], block_of[conf_idx]))]
    cb_idx = n + np.arange(n_blocks)
    pos = np.concatenate([np.searchsorted(block_of[conf_idx], np.arange(n_blocks)), [conf_idx.size]])
    pieces = []
    for b in range(n_blocks):
        pieces.append(cb_idx[b:b + 1])
        pieces.append(conf_idx[pos[b]:pos[b + 1]])
    confirmed = np.concatenate(pieces) if pieces else np.zeros(0, np.int64)
    blocks = BlockColumns(
        height=heights, time=b_times,
        size_mb=(bytes_per_block + COINBASE_SIZE) / 1e6,
        tx_count=cnt_per_block + 1,
    )

    charts = _charts(params, arrival, size, block_of, b_times, cnt_per_block, bytes_per_block,
                     r_noise)
    addresses = [f"syn{c:x}" for c in range(n_pool)] + [f"miner{k}" for k in range(MINER_POOL)]
    return IngestBatch(blocks, _take(everything, confirmed), charts, addresses, (t0, t1),
                       _take(everything, np.flatnonzero(~conf)))


def _charts(params: SynthParams, arrival: np.ndarray, size: np.ndarray, block_of: np.ndarray,
            b_times: np.ndarray, cnt_per_block: np.ndarray, bytes_per_block: np.ndarray,
            rng: np.random.Generator) -> dict[ChartSeries, tuple[np.ndarray, np.ndarray]]:
    ts = params.start + MINUTE * np.arange(params.duration_seconds // MINUTE, dtype=np.int64)
    arr_bytes = np.concatenate([[0], np.cumsum(size)])
    blk_cnt = np.concatenate([[0], np.cumsum(cnt_per_block)])
    blk_bytes = np.concatenate([[0.0], np.cumsum(bytes_per_block)])

    def state(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a = np.searchsorted(arrival, t, side="right")
        b = np.searchsorted(b_times, t, side="right")
        return (a - blk_cnt[b]).astype(np.float64), arr_bytes[a] - blk_bytes[b]

    count, nbytes = state(ts)
    _, before = state(ts - 1)
    _, after = state(ts + MINUTE - 1)
    growth = (after - before) / MINUTE
    tps = (np.searchsorted(arrival, ts + MINUTE, side="left")
           - np.searchsorted(arrival, ts, side="left")) / MINUTE
    out = {
        ChartSeries.MEMPOOL_SIZE_BYTES: nbytes.astype(np.float64),
        ChartSeries.MEMPOOL_COUNT: count,
        ChartSeries.MEMPOOL_GROWTH: growth,
        ChartSeries.TX_PER_SECOND: tps.astype(np.float64),
    }
    if params.chart_noise > 0:
        for s, v in out.items():
            noisy = v * (1.0 + params.chart_noise * rng.standard_normal(v.size))
            out[s] = noisy if s is ChartSeries.MEMPOOL_GROWTH else np.maximum(noisy, 0.0)
    return {s: (ts.copy(), v) for s, v in out.items()}


# --------------------------------------------------------------------------
# Files

def replay(batch: IngestBatch, out_dir: str | os.PathLike) -> list[Path]:
    """Write ``batch`` in the ingest formats: ``blocks.ndjson``, one
    ``chart_<series>.csv`` per series, ``mempool.ndjson`` with transactions
    still pending, and ``batch.json`` describing the span."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    written = []
    p = root / "blocks.ndjson"
    atomic_write(p, "".join(emit_block_records(batch.raw_blocks(), batch.raw_transactions())))
    written.append(p)
    for series in ChartSeries:
        if series in batch.charts:
            p = root / f"chart_{series.value}.csv"
            atomic_write(p, emit_chart_series(batch.chart_samples(series)))
            written.append(p)
    p = root / "mempool.ndjson"
    atomic_write(p, "".join(json.dumps(tx_to_json(t), separators=(",", ":")) + "\n"
                      for t in batch.raw_transactions(pending=True)))
    written.append(p)
    p = root / "batch.json"
    meta = {"span": list(batch.span) if batch.span else None,
            "blocks": len(batch.blocks), "transactions": len(batch.txs),
            "pending": len(batch.pending)}
    atomic_write(p, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    written.append(p)
    return written


def scenario_to_dict(params: SynthParams, effects: Sequence[EventEffect]) -> dict:
    return {"params": asdict(params), "effects": [e.as_dict() for e in effects]}


def scenario_from_dict(doc: dict) -> tuple[SynthParams, list[EventEffect]]:
    """Parse ``{"params": {...}, "effects": [...]}``.

    An effect may give ``onset_day`` (days after the start) instead of
    ``onset``.
    """
    if not isinstance(doc, dict):
        raise InvalidParams("scenario must be a JSON object")
    try:
        params = SynthParams.from_dict(dict(doc.get("params", {})))
        effects = []
        for raw in doc.get("effects", []):
            raw = dict(raw)
            if "onset_day" in raw:
                raw["onset"] = params.at_day(raw.pop("onset_day"))
            effects.append(EventEffect(**raw))
    except TypeError as exc:
        raise InvalidParams(str(exc)) from None
    return params, effects


def load_scenario(path: str | os.PathLike) -> tuple[SynthParams, list[EventEffect]]:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidParams(f"{path}: {exc}") from None
    return scenario_from_dict(doc)


def save_scenario(path: str | os.PathLike, params: SynthParams,
                  effects: Sequence[EventEffect]) -> None:
    atomic_write(Path(path), json.dumps(scenario_to_dict(params, effects), indent=2) + "\n")


def expected_tx_count(params: SynthParams, effects: Sequence[EventEffect] = ()) -> float:
    """Mean number of generated transactions (Poisson intensity integral)."""
    n_min = params.duration_seconds // MINUTE
    mids = params.start + MINUTE * (np.arange(n_min) + 0.5)
    return float(math.fsum(param_at(params, effects, "tx_rate", mids) * MINUTE))
