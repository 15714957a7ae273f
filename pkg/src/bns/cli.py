"""``bns`` command-line interface.

Subcommands::

    bns ingest PATH... --store DIR        parse NDJSON/CSV (or synth output dirs) into a store
    bns synth [SCENARIO] --out DIR        generate synthetic data in ingest formats
    bns impact --store S --config C       I-Score per event and feature set
    bns sweep  --store S --config C       I-Score curves over delays 0..240 h
    bns scan   --store S                  rolling distance scan with spike detection
    bns export --store S                  BNS vectors as CSV
    bns rerun MANIFEST                    repeat a run and compare output hashes

Every run writes ``<command>.manifest.json`` next to its outputs with the argv, every
resolved setting and a SHA-256 per output file.  Exit codes: 0 success,
2 input error, 3 configuration or coverage error, 4 internal failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from . import __version__
from .data import (ChartSeries, IngestBatch, format_time, parse_block_records,
                   parse_chart_series, parse_time)
from .distance import DistanceMeasure
from .errors import (BNSError, ConfigError, EmptyInput, InputError, InvalidConfig,
                     MalformedRecord)
from .export import (dumps, scan_svg, spikes_document, sweep_summary, sweep_svg,
                     write_csv, write_curve, write_json, write_scan, write_vectors)
from .features import (VALUE_BIN_EDGES, FeatureSetId, _threads, build_matrix)
from .impact import (SCALE_QUANTUM, ImpactConfig, detect_spikes,
                     impact_score, rolling_scan, temporal_sweep)
from .store import AttributeStore, atomic_write
from .synth import generate, load_scenario, replay

EXIT_OK, EXIT_INPUT, EXIT_CONFIG, EXIT_INTERNAL = 0, 2, 3, 4

EVENT_TYPES = {"g": "Global", "global": "Global", "f": "Financial", "financial": "Financial",
               "r": "Regulatory", "regulatory": "Regulatory"}
SWEEP_SETS = ("Overall", "Activity", "Transaction", "Fee")


# --------------------------------------------------------------------------
# Run configuration

@dataclass(frozen=True)
class EventSpec:
    name: str
    type: str
    time: int
    background_days: float | None = None


@dataclass(frozen=True)
class Analysis:
    data_frame_hours: float = 96
    step_hours: float = 1
    background_days: float = 120
    gap_hours: float = 0
    distance: str = DistanceMeasure.SQUARED_EUCLIDEAN.value
    feature_sets: tuple[str, ...] = ("Overall",)
    sweep_feature_sets: tuple[str, ...] = SWEEP_SETS
    delay_step_hours: float = 2
    max_delay_hours: float = 240
    threshold: float = 0.4
    min_separation_hours: float = 48
    exclude_straddling: bool = False


@dataclass(frozen=True)
class RunConfig:
    events: tuple[EventSpec, ...] = ()
    analysis: Analysis = field(default_factory=Analysis)
    inputs: tuple[str, ...] = ()
    store: str | None = None
    scan_start: int | None = None
    scan_end: int | None = None
    output_dir: str | None = None

    def event(self, name: str) -> EventSpec:
        for e in self.events:
            if e.name == name:
                return e
        raise InvalidConfig(f"no event named {name!r} in config")


def _req(d: dict, key: str, where: str):
    if key not in d:
        raise InvalidConfig(f"{where}: missing {key!r}")
    return d[key]


def parse_run_config(doc: dict, base: Path | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from its JSON form.

    Relative paths are resolved against ``base`` (the config file's folder).
    """
    if not isinstance(doc, dict):
        raise InvalidConfig("config must be a JSON object")
    unknown = set(doc) - {"events", "analysis", "inputs", "store", "scan", "output_dir"}
    if unknown:
        raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")

    def path(p: str) -> str:
        return str(base / p) if base is not None and not os.path.isabs(p) else p

    events = []
    for i, raw in enumerate(doc.get("events", [])):
        where = f"events[{i}]"
        if not isinstance(raw, dict):
            raise InvalidConfig(f"{where}: must be an object")
        kind = EVENT_TYPES.get(str(_req(raw, "type", where)).lower())
        if kind is None:
            raise InvalidConfig(f"{where}: type must be Global, Financial or Regulatory")
        try:
            t = parse_time(_req(raw, "time", where))
        except ValueError as exc:
            raise InvalidConfig(f"{where}: {exc}") from None
        lb = raw.get("background_days")
        if lb is not None and not (isinstance(lb, (int, float)) and lb > 0):
            raise InvalidConfig(f"{where}: background_days must be positive")
        events.append(EventSpec(str(_req(raw, "name", where)), kind, t, lb))
    names = [e.name for e in events]
    if len(set(names)) != len(names):
        raise InvalidConfig("event names must be unique")

    a = dict(doc.get("analysis", {}))
    allowed = {f for f in Analysis.__dataclass_fields__}
    if set(a) - allowed:
        raise InvalidConfig(f"unknown analysis keys: {sorted(set(a) - allowed)}")
    for key in ("feature_sets", "sweep_feature_sets"):
        if key in a:
            a[key] = tuple(FeatureSetId.parse(x).value for x in a[key])
    try:
        analysis = Analysis(**a)
        DistanceMeasure(analysis.distance)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(str(exc)) from None

    scan = doc.get("scan", {})
    try:
        s0 = parse_time(scan["start"]) if "start" in scan else None
        s1 = parse_time(scan["end"]) if "end" in scan else None
    except ValueError as exc:
        raise InvalidConfig(f"scan: {exc}") from None
    inputs = doc.get("inputs", [])
    if isinstance(inputs, str):
        inputs = [inputs]
    cfg = RunConfig(tuple(events), analysis, tuple(path(p) for p in inputs),
                    path(doc["store"]) if doc.get("store") else None, s0, s1,
                    path(doc["output_dir"]) if doc.get("output_dir") else None)
    for e in cfg.events:
        _impact_config(cfg, e, analysis.feature_sets[0] if analysis.feature_sets else "Overall",
                       analysis.gap_hours)
    return cfg


def load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file {p} not found")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{p}: {exc}") from None
    return parse_run_config(doc, p.parent)


def _impact_config(cfg: RunConfig, event: EventSpec, fs: str, gap: float) -> ImpactConfig:
    a = cfg.analysis
    return ImpactConfig(
        event_time=event.time, data_frame_hours=a.data_frame_hours, gap_hours=gap,
        background_days=event.background_days or a.background_days, step_hours=a.step_hours,
        feature_set=FeatureSetId.parse(fs), distance=DistanceMeasure(a.distance),
        exclude_straddling=a.exclude_straddling)


def _apply_flags(cfg: RunConfig, ns: argparse.Namespace) -> RunConfig:
    a = cfg.analysis
    over = {}
    for flag in ("data_frame_hours", "step_hours", "background_days", "gap_hours", "threshold",
                 "min_separation_hours", "delay_step_hours", "max_delay_hours", "distance"):
        v = getattr(ns, flag, None)
        if v is not None:
            over[flag] = v
    fs = getattr(ns, "feature_set", None)
    if fs:
        sets = tuple(FeatureSetId.parse(x).value for x in fs)
        over["feature_sets"] = sets
        over["sweep_feature_sets"] = sets
    if getattr(ns, "exclude_straddling", False):
        over["exclude_straddling"] = True
    if over:
        a = replace(a, **over)
    cfg = replace(cfg, analysis=a)
    if getattr(ns, "time", None) is not None:
        name = getattr(ns, "event_name", None) or "event"
        try:
            t = parse_time(ns.time)
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from None
        cfg = replace(cfg, events=(EventSpec(name, "Global", t),))
    elif getattr(ns, "event", None):
        cfg = replace(cfg, events=tuple(cfg.event(n) for n in ns.event))
    try:
        if getattr(ns, "start", None) is not None:
            cfg = replace(cfg, scan_start=parse_time(ns.start))
        if getattr(ns, "end", None) is not None:
            cfg = replace(cfg, scan_end=parse_time(ns.end))
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from None
    return cfg


def _resolved(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["events"] = [{**asdict(e), "time_iso": format_time(e.time)} for e in cfg.events]
    d["conventions"] = {
        "value_bin_edges_btc": list(VALUE_BIN_EDGES),
        "bin_rule": "(lo, hi]; zero in the first bin",
        "scaler": "min-max per feature over background and event windows",
        "scale_quantum": SCALE_QUANTUM,
        "background_sd": "population",
        "percentiles": "linear interpolation at rank q*(n-1)",
        "kurtosis": "excess",
        "pair_offset": "(data_frame_hours + gap_hours) / step_hours",
        "straddling_pairs": "excluded" if cfg.analysis.exclude_straddling else "included",
    }
    return d


# --------------------------------------------------------------------------
# Helpers

def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "event"


def _out_dir(ns: argparse.Namespace, cfg: RunConfig) -> Path:
    out = ns.out or cfg.output_dir
    if not out:
        raise InvalidConfig("no output directory: pass --out or set output_dir")
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _open_store(ns: argparse.Namespace, cfg: RunConfig) -> AttributeStore:
    path = ns.store or cfg.store
    if not path:
        raise InvalidConfig("no store: pass --store or set store in the config")
    return AttributeStore.load(path)


def _jobs(fn: Callable, items: Sequence) -> list:
    if len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(len(items), _threads())) as pool:
        return list(pool.map(fn, items))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def manifest_name(command: str) -> str:
    return f"{command}.manifest.json"


def _write_manifest(out: Path, command: str, argv: Sequence[str], resolved: dict,
                    outputs: Sequence[Path]) -> Path:
    doc = {"tool": "bns", "version": __version__, "command": command,
           "argv": list(argv), "cwd": os.getcwd(), "resolved": resolved,
           "outputs": {str(p.relative_to(out)): _sha256(p)
                       for p in sorted(outputs, key=lambda q: str(q))}}
    target = out / manifest_name(command)
    atomic_write(target, dumps(doc))
    return target


def _default_range(store: AttributeStore, cfg: RunConfig) -> tuple[int, int]:
    ldf = int(round(cfg.analysis.data_frame_hours * 3600))
    lo, hi = store.span
    t0 = cfg.scan_start if cfg.scan_start is not None else lo + ldf
    t1 = cfg.scan_end if cfg.scan_end is not None else hi - ldf
    if t1 < t0:
        raise InvalidConfig("scan range is empty")
    return t0, t1


# --------------------------------------------------------------------------
# Commands

def _ingest_inputs(paths: Sequence[str], charts: Sequence[str]) -> list[IngestBatch]:
    batches = []
    named: list[tuple[ChartSeries, Path]] = []
    for spec in charts:
        name, _, p = spec.partition("=")
        try:
            named.append((ChartSeries(name), Path(p)))
        except ValueError:
            raise InputError(f"unknown chart series {name!r}") from None
    loose_blocks, loose_charts = [], list(named)
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            batches.append(_ingest_dir(p))
        elif not p.exists():
            raise InputError(f"{p} not found")
        elif p.suffix in (".ndjson", ".jsonl", ".json"):
            loose_blocks.append(p)
        elif p.suffix == ".csv":
            loose_charts.append((_series_from_name(p), p))
        else:
            raise InputError(f"{p}: unrecognised input type")
    if loose_blocks or loose_charts:
        blocks, txs = [], []
        for p in loose_blocks:
            b, t = _parse_blocks(p)
            blocks += b
            txs += t
        samples = [_parse_chart(p, s) for s, p in loose_charts]
        batches.append(IngestBatch.from_records(blocks, txs, samples))
    if not batches:
        raise EmptyInput("no input files given")
    return batches


def _series_from_name(p: Path) -> ChartSeries:
    stem = p.stem[len("chart_"):] if p.stem.startswith("chart_") else p.stem
    try:
        return ChartSeries(stem)
    except ValueError:
        raise InputError(f"{p}: cannot tell the chart series from the file name; "
                         f"use --chart SERIES=PATH") from None


def _parse_blocks(p: Path):
    with open(p) as fh:
        try:
            return parse_block_records(fh)
        except InputError as exc:
            raise _located(exc, p)


def _located(exc: InputError, p: Path) -> InputError:
    exc.args = (f"{p}: {exc}",)
    return exc


def _parse_chart(p: Path, series: ChartSeries):
    with open(p) as fh:
        try:
            return parse_chart_series(fh, series)
        except InputError as exc:
            raise _located(exc, p)


def _ingest_dir(root: Path) -> IngestBatch:
    blocks, txs = [], []
    files = sorted(f for f in root.glob("*.ndjson") if f.name != "mempool.ndjson")
    for f in files:
        b, t = _parse_blocks(f)
        blocks += b
        txs += t
    samples = [_parse_chart(f, _series_from_name(f)) for f in sorted(root.glob("chart_*.csv"))]
    if not files and not samples:
        raise EmptyInput(f"{root}: no block or chart files")
    span = None
    meta = root / "batch.json"
    if meta.exists():
        doc = json.loads(meta.read_text())
        if doc.get("span"):
            span = (int(doc["span"][0]), int(doc["span"][1]))
    return IngestBatch.from_records(blocks, txs, samples, span)


def cmd_ingest(ns: argparse.Namespace, cfg: RunConfig) -> tuple[Path, list[Path], dict]:
    paths = list(ns.paths) or list(cfg.inputs)
    batches = _ingest_inputs(paths, ns.chart or [])
    store = AttributeStore.from_batches(batches)
    target = ns.store or cfg.store
    if not target:
        raise InvalidConfig("no store path: pass --store")
    root = store.save(target)
    outputs = sorted(root.glob("*.bin")) + ([root / "addresses.txt"] if store.addresses is not None else [])
    info = {"inputs": paths, "charts": ns.chart or [],
            "keys": {k.value: {"records": int(store.timestamps(k).size),
                               "coverage": list(store.coverage(k))} for k in store.keys()}}
    print(f"ingested {sum(len(b.txs) for b in batches)} transactions, "
          f"{sum(len(b.blocks) for b in batches)} blocks into {root}")
    return root, outputs, info


def cmd_synth(ns: argparse.Namespace, cfg: RunConfig) -> tuple[Path, list[Path], dict]:
    from .synth import SynthParams
    if ns.scenario:
        params, effects = load_scenario(ns.scenario)
    else:
        params, effects = SynthParams(), []
    if ns.seed is not None:
        params = replace(params, seed=ns.seed)
    out = _out_dir(ns, cfg)
    batch = generate(params, effects)
    files = replay(batch, out)
    print(f"generated {len(batch.txs)} confirmed and {len(batch.pending)} pending "
          f"transactions in {len(batch.blocks)} blocks under {out}")
    return out, files, {"params": asdict(params), "effects": [e.as_dict() for e in effects]}


def cmd_impact(ns: argparse.Namespace, cfg: RunConfig) -> tuple[Path, list[Path], dict]:
    if not cfg.events:
        raise InvalidConfig("no events: give --time or list events in the config")
    store = _open_store(ns, cfg)
    out = _out_dir(ns, cfg)
    jobs = [(e, fs) for e in cfg.events for fs in cfg.analysis.feature_sets]
    results = _jobs(lambda j: impact_score(store, _impact_config(cfg, j[0], j[1], cfg.analysis.gap_hours)),
                    jobs)
    files, rows = [], []
    for (e, fs), r in zip(jobs, results):
        doc = {"event": {"name": e.name, "type": e.type, "time": format_time(e.time)}, **r.as_dict()}
        files.append(write_json(out / f"impact_{_slug(e.name)}_{fs}.json", doc))
        rows.append((e.name, fs, r.config.gap_hours, r.i_score, r.classification))
        print(f"{e.name:30s} {fs:12s} I = {r.i_score: .4f}  {r.classification}")
    files.append(write_csv(out / "impact_summary.csv",
                           ("event", "feature_set", "gap_hours", "i_score", "classification"), rows))
    return out, files, _resolved(cfg)


def cmd_sweep(ns: argparse.Namespace, cfg: RunConfig) -> tuple[Path, list[Path], dict]:
    if not cfg.events:
        raise InvalidConfig("no events: give --time or list events in the config")
    a = cfg.analysis
    if a.delay_step_hours <= 0 or a.max_delay_hours < 0:
        raise InvalidConfig("delay grid must have a positive step and non-negative end")
    n = int(np.floor(a.max_delay_hours / a.delay_step_hours + 1e-9))
    delays = [i * a.delay_step_hours for i in range(n + 1)]
    store = _open_store(ns, cfg)
    out = _out_dir(ns, cfg)
    files = []
    for e in cfg.events:
        sets = list(a.sweep_feature_sets)
        curves = _jobs(lambda fs: temporal_sweep(store, _impact_config(cfg, e, fs, 0), delays), sets)
        for c in curves:
            files.append(write_curve(out / f"sweep_{_slug(e.name)}_{c.feature_set.value}.csv", c))
            am = c.argmax
            msg = "no points" if am is None else f"max I = {am[1]:.4f} at {am[0]:g} h"
            print(f"{e.name:30s} {c.feature_set.value:12s} {msg}")
        summary = {"event": {"name": e.name, "type": e.type, "time": format_time(e.time)},
                   "delays_hours": delays, "feature_sets": sweep_summary(curves)}
        files.append(write_json(out / f"sweep_{_slug(e.name)}.json", summary))
        if ns.svg:
            p = out / f"sweep_{_slug(e.name)}.svg"
            atomic_write(p, sweep_svg(curves, e.name))
            files.append(p)
    return out, files, {**_resolved(cfg), "delays_hours": delays}


def cmd_scan(ns: argparse.Namespace, cfg: RunConfig) -> tuple[Path, list[Path], dict]:
    a = cfg.analysis
    store = _open_store(ns, cfg)
    out = _out_dir(ns, cfg)
    t0, t1 = _default_range(store, cfg)
    fs = a.feature_sets[0] if a.feature_sets else "Overall"
    series = rolling_scan(store, t0, t1, a.data_frame_hours, a.step_hours, fs, a.distance)
    spikes = detect_spikes(series, a.threshold, a.min_separation_hours)
    files = [write_scan(out / "scan.csv", series),
             write_json(out / "spikes.json", {**spikes_document(spikes, a.threshold, a.min_separation_hours),
                                              "spikes_iso": [format_time(s.time) for s in spikes]})]
    if ns.svg:
        p = out / "scan.svg"
        atomic_write(p, scan_svg(series, a.threshold, f"{fs} rolling distance"))
        files.append(p)
    print(f"{series.times.size} scan points, {len(spikes)} spikes above {a.threshold}")
    for s in spikes:
        print(f"  {format_time(s.time)}  {s.distance:.4f}")
    return out, files, {**_resolved(cfg), "scan_range": [t0, t1], "feature_set": fs}


def cmd_export(ns: argparse.Namespace, cfg: RunConfig) -> tuple[Path, list[Path], dict]:
    a = cfg.analysis
    store = _open_store(ns, cfg)
    out = _out_dir(ns, cfg)
    lo, hi = store.span
    t0 = cfg.scan_start if cfg.scan_start is not None else lo
    t1 = cfg.scan_end if cfg.scan_end is not None else hi
    step = int(round(a.step_hours * 3600))
    ldf = int(round(a.data_frame_hours * 3600))
    if t1 - t0 < ldf:
        raise InvalidConfig("export range is shorter than one data frame")
    starts = t0 + step * np.arange((t1 - t0 - ldf) // step + 1, dtype=np.int64)
    ends = starts + ldf
    files = []
    for fs in a.feature_sets:
        fid = FeatureSetId.parse(fs)
        m = build_matrix(store, fid, starts, ends)
        files += write_vectors(out / f"vectors_{fid.value}.csv", out / f"vectors_{fid.value}.json",
                               fid, starts, ends, m)
    print(f"exported {starts.size} windows for {', '.join(a.feature_sets)}")
    return out, files, {**_resolved(cfg), "range": [int(t0), int(t1)]}


COMMANDS = {"ingest": cmd_ingest, "synth": cmd_synth, "impact": cmd_impact,
            "sweep": cmd_sweep, "scan": cmd_scan, "export": cmd_export}


# --------------------------------------------------------------------------
# Argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bns", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"bns {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, store: bool = True) -> None:
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--out", help="output directory")
        if store:
            p.add_argument("--store", help="store directory")

    def analysis(p: argparse.ArgumentParser) -> None:
        p.add_argument("--feature-set", action="append", dest="feature_set",
                       help="Full, Overall, Activity, Transaction or Fee (repeatable)")
        p.add_argument("--data-frame-hours", type=float)
        p.add_argument("--step-hours", type=float)
        p.add_argument("--background-days", type=float)
        p.add_argument("--distance", choices=[m.value for m in DistanceMeasure])

    def events(p: argparse.ArgumentParser) -> None:
        p.add_argument("--event", action="append", help="event name from the config (repeatable)")
        p.add_argument("--time", help="ad-hoc event time (ISO-8601 or epoch seconds)")
        p.add_argument("--event-name", help="name for an ad-hoc --time event")
        p.add_argument("--exclude-straddling", action="store_true",
                       help="drop background pairs that span the event time")

    p = sub.add_parser("ingest", help="parse block NDJSON and chart CSV into a store")
    p.add_argument("paths", nargs="*", help="NDJSON, CSV or synth output directories")
    p.add_argument("--chart", action="append", metavar="SERIES=PATH",
                   help="chart CSV with its series name")
    p.add_argument("--config")
    p.add_argument("--store")
    p.set_defaults(out=None)

    p = sub.add_parser("synth", help="generate synthetic data")
    p.add_argument("scenario", nargs="?", help="scenario JSON {params, effects}")
    p.add_argument("--seed", type=int)
    common(p, store=False)

    p = sub.add_parser("impact", help="I-Score for events")
    common(p)
    analysis(p)
    events(p)
    p.add_argument("--gap-hours", type=float)

    p = sub.add_parser("sweep", help="I-Score curves over event delays")
    common(p)
    analysis(p)
    events(p)
    p.add_argument("--delay-step-hours", type=float)
    p.add_argument("--max-delay-hours", type=float)
    p.add_argument("--svg", action="store_true", help="also write an SVG chart")

    p = sub.add_parser("scan", help="rolling distance scan and spike detection")
    common(p)
    analysis(p)
    p.add_argument("--start", help="first scan centre (ISO-8601 or epoch)")
    p.add_argument("--end", help="last scan centre")
    p.add_argument("--threshold", type=float)
    p.add_argument("--min-separation-hours", type=float)
    p.add_argument("--svg", action="store_true", help="also write an SVG chart")

    p = sub.add_parser("export", help="write BNS vectors as CSV")
    common(p)
    analysis(p)
    p.add_argument("--start", help="first window start")
    p.add_argument("--end", help="last window end")

    p = sub.add_parser("rerun", help="repeat a run from its manifest and compare outputs")
    p.add_argument("manifest")
    return parser


@contextmanager
def _cwd(path: str) -> Iterator[None]:
    old = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(old)


def _run(argv: Sequence[str]) -> int:
    ns = build_parser().parse_args(argv)
    if ns.command == "rerun":
        return _rerun(ns.manifest)
    cfg = _apply_flags(load_run_config(ns.config), ns)
    out, files, resolved = COMMANDS[ns.command](ns, cfg)
    _write_manifest(Path(out), ns.command, argv, resolved, files)
    return EXIT_OK


def _rerun(manifest: str) -> int:
    p = Path(manifest)
    if not p.is_file():
        raise InputError(f"manifest {p} not found")
    try:
        doc = json.loads(p.read_text())
        argv, cwd, recorded = doc["argv"], doc["cwd"], doc["outputs"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"{p}: not a run manifest ({exc})") from None
    out_dir = p.resolve().parent
    with _cwd(cwd):
        code = _run(argv)
    if code != EXIT_OK:
        return code
    fresh = json.loads((out_dir / manifest_name(doc["command"])).read_text())["outputs"]
    changed = sorted(k for k in set(recorded) | set(fresh) if recorded.get(k) != fresh.get(k))
    if changed:
        for k in changed:
            print(f"differs: {k}", file=sys.stderr)
        return EXIT_INTERNAL
    print(f"reproduced {len(recorded)} outputs bit-identically")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return _run(argv)
    except MalformedRecord as exc:
        for line, reason in getattr(exc, "problems", [(exc.line, exc.reason)]):
            print(f"bns: malformed record at line {line}: {reason}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"bns: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as exc:
        print(f"bns: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_INPUT
    except BNSError as exc:
        print(f"bns: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort exit code mapping
        print(f"bns: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
