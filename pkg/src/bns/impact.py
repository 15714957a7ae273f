"""Event impact scoring against background fluctuation.

An analysis centres a background period of ``background_days`` on the event
time and tiles it with BNS windows of ``data_frame_hours`` advancing by
``step_hours``.  Windows ``i`` and ``i + p`` form a pair when the second
starts exactly ``gap_hours`` after the first ends, which on a uniform grid
means ``p = (data_frame_hours + gap_hours) / step_hours``.  The distances of
all such pairs form the background set; the event pair straddles the event
time with the gap centred on it.  The I-Score is::

    (event distance - median(background)) / std(background)

with the population standard deviation.

Features are min-max scaled per column over every vector taking part in an
analysis and then rounded to multiples of ``SCALE_QUANTUM``.  On that grid
squared Euclidean distances are exact sums, so background statistics do not
depend on summation order and positive affine re-expression of any raw
feature leaves every distance unchanged.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from .distance import DistanceMeasure, row_distances
from .errors import (BNSError, CoverageError, DegenerateBackground,
                     InsufficientWindows, InvalidConfig)
from .features import (BNSVector, Diagnostics, FeatureSetId, WindowSpec,
                       build_matrix, covers)
from .store import AttributeStore

HOUR = 3600
DAY = 86400
SCALE_QUANTUM = 2.0 ** -20

# checked from the top; first threshold strictly exceeded wins
THRESHOLDS = (("significant", 2.9), ("substantial", 1.9), ("discernible", 1.0))

DEFAULT_DELAYS = tuple(range(0, 241, 2))


def classify(i_score: float) -> str:
    for label, bound in THRESHOLDS:
        if i_score > bound:
            return label
    return "none"


def _seconds(hours: float) -> int:
    s = hours * HOUR
    if abs(s - round(s)) > 1e-6:
        raise InvalidConfig(f"{hours} h is not a whole number of seconds")
    return int(round(s))


@dataclass(frozen=True)
class ImpactConfig:
    event_time: int
    data_frame_hours: float = 96
    gap_hours: float = 0
    background_days: float = 120
    step_hours: float = 1
    feature_set: FeatureSetId = FeatureSetId.OVERALL
    distance: DistanceMeasure = DistanceMeasure.SQUARED_EUCLIDEAN
    # non-default: drop background pairs whose span contains the event time
    exclude_straddling: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "feature_set", FeatureSetId.parse(self.feature_set))
        object.__setattr__(self, "distance", DistanceMeasure(self.distance))
        if not self.data_frame_hours > 0:
            raise InvalidConfig("data_frame_hours must be positive")
        if self.gap_hours < 0:
            raise InvalidConfig("gap_hours must be non-negative")
        if self.step_hours < 1:
            raise InvalidConfig("step_hours must be at least 1")
        if self.background_days * 24 < 2 * self.data_frame_hours + self.gap_hours:
            raise InvalidConfig(
                f"background of {self.background_days} d cannot hold two "
                f"{self.data_frame_hours} h windows {self.gap_hours} h apart")
        pair_offset(self)

    @property
    def overlap_hours(self) -> float:
        return self.data_frame_hours - self.step_hours

    @property
    def delay_hours(self) -> float:
        return self.gap_hours / 2

    def with_gap(self, gap_hours: float) -> "ImpactConfig":
        return replace(self, gap_hours=gap_hours)

    def event_windows(self) -> tuple[WindowSpec, WindowSpec]:
        t = self.event_time
        half_gap = _seconds(self.gap_hours / 2)
        ldf = _seconds(self.data_frame_hours)
        return (WindowSpec(t - half_gap - ldf, t - half_gap),
                WindowSpec(t + half_gap, t + half_gap + ldf))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["feature_set"] = self.feature_set.value
        d["distance"] = self.distance.value
        return d


def pair_offset(cfg: ImpactConfig) -> int:
    """Index offset ``p`` with ``start(v[i+p]) - end(v[i]) == gap``."""
    ratio = (cfg.data_frame_hours + cfg.gap_hours) / cfg.step_hours
    p = round(ratio)
    if abs(ratio - p) > 1e-9:
        raise InvalidConfig(
            f"data frame + gap ({cfg.data_frame_hours} + {cfg.gap_hours} h) "
            f"is not a multiple of the {cfg.step_hours} h step")
    return int(p)


def background_windows(event_time: int, background_days: float, data_frame_hours: float,
                       step_hours: float) -> tuple[np.ndarray, np.ndarray]:
    """Start/end seconds of the rolling windows tiling the background period.

    The first window starts at ``t - background/2``; windows advance by the
    step while they still end inside ``t + background/2``.
    """
    total_h = background_days * 24
    if total_h < data_frame_hours:
        raise InvalidConfig("background shorter than one data frame")
    count = int(math.floor((total_h - data_frame_hours) / step_hours + 1e-9)) + 1
    first = event_time - _seconds(total_h / 2)
    starts = first + np.arange(count, dtype=np.int64) * _seconds(step_hours)
    return starts, starts + _seconds(data_frame_hours)


@dataclass
class VectorSeries:
    """Chronological BNS vectors backed by one feature matrix."""

    feature_set: FeatureSetId
    starts: np.ndarray
    ends: np.ndarray
    matrix: np.ndarray

    def __len__(self) -> int:
        return int(self.starts.size)

    def __getitem__(self, i: int) -> BNSVector:
        return BNSVector(self.feature_set, WindowSpec(int(self.starts[i]), int(self.ends[i])),
                         tuple(float(x) for x in self.matrix[i]))

    def __iter__(self) -> Iterator[BNSVector]:
        return (self[i] for i in range(len(self)))


def rolling_vectors(store: AttributeStore, cfg: ImpactConfig,
                    diagnostics: Diagnostics | None = None) -> VectorSeries:
    starts, ends = background_windows(cfg.event_time, cfg.background_days,
                                      cfg.data_frame_hours, cfg.step_hours)
    m = build_matrix(store, cfg.feature_set, starts, ends, diagnostics)
    return VectorSeries(cfg.feature_set, starts, ends, m)


# --------------------------------------------------------------------------
# Scaling and background

@dataclass(frozen=True)
class MinMaxScaler:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "MinMaxScaler":
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return cls(x.min(axis=0), x.max(axis=0))

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        span = self.hi - self.lo
        live = span > 0
        z = np.zeros_like(x)
        z[:, live] = (x[:, live] - self.lo[live]) / span[live]
        return np.rint(z / SCALE_QUANTUM) * SCALE_QUANTUM


def median(values: np.ndarray) -> float:
    s = np.sort(np.asarray(values, dtype=np.float64))
    n = s.size
    if n == 0:
        raise ValueError("median of empty set")
    mid = n // 2
    return float(s[mid]) if n % 2 else float((s[mid - 1] + s[mid]) / 2)


def population_std(values: np.ndarray) -> float:
    """Order-insensitive population standard deviation (exactly rounded sums)."""
    v = np.asarray(values, dtype=np.float64)
    mean = math.fsum(v) / v.size
    return math.sqrt(math.fsum((v - mean) ** 2) / v.size)


@dataclass(frozen=True)
class BackgroundDistribution:
    distances: np.ndarray
    median: float
    std: float
    pair_count: int
    scaler: MinMaxScaler

    def summary(self) -> dict:
        return {"median": self.median, "std": self.std, "pair_count": self.pair_count}


def background_distribution(vectors: VectorSeries | np.ndarray, cfg: ImpactConfig,
                            event_vectors: np.ndarray | None = None,
                            starts: np.ndarray | None = None) -> BackgroundDistribution:
    """Distances of every background pair ``(v[i], v[i+p])``.

    The scaler is fitted over the background vectors together with
    ``event_vectors`` when given.  ``starts`` (window start seconds) is only
    needed for ``cfg.exclude_straddling``.
    """
    if isinstance(vectors, VectorSeries):
        starts = vectors.starts if starts is None else starts
        x = vectors.matrix
    else:
        x = np.asarray(vectors, dtype=np.float64)
    p = pair_offset(cfg)
    n = x.shape[0]
    if n <= p:
        raise InsufficientWindows(f"{n} vectors cannot form a pair {p} steps apart")
    fit_on = x if event_vectors is None else np.vstack([x, event_vectors])
    scaler = MinMaxScaler.fit(fit_on)
    xs = scaler.transform(x)
    d = row_distances(xs[: n - p], xs[p:], cfg.distance)
    if cfg.exclude_straddling:
        if starts is None:
            raise InvalidConfig("excluding straddling pairs needs window start times")
        first_start = np.asarray(starts[: n - p])
        second_end = np.asarray(starts[p:]) + _seconds(cfg.data_frame_hours)
        keep = ~((first_start < cfg.event_time) & (second_end > cfg.event_time))
        d = d[keep]
        if d.size == 0:
            raise InsufficientWindows("every background pair straddles the event")
    return BackgroundDistribution(d, median(d), population_std(d), int(d.size), scaler)


def i_score(event_distance: float, background: BackgroundDistribution | np.ndarray) -> float:
    if isinstance(background, BackgroundDistribution):
        md, sd = background.median, background.std
    else:
        md, sd = median(background), population_std(background)
    if sd == 0:
        raise DegenerateBackground("background distances have zero standard deviation")
    return (event_distance - md) / sd


@dataclass(frozen=True)
class ImpactResult:
    config: ImpactConfig
    event_distance: float
    i_score: float
    classification: str
    background: dict

    @property
    def delay(self) -> float:
        return self.config.delay_hours

    def as_dict(self) -> dict:
        return {"config": self.config.as_dict(), "event_distance": self.event_distance,
                "background": self.background, "i_score": self.i_score,
                "classification": self.classification, "delay_hours": self.delay}


def _score(series: VectorSeries, event_pair: np.ndarray, cfg: ImpactConfig) -> ImpactResult:
    bg = background_distribution(series, cfg, event_pair)
    e = bg.scaler.transform(event_pair)
    delta = float(row_distances(e[:1], e[1:], cfg.distance)[0])
    score = i_score(delta, bg)
    return ImpactResult(cfg, delta, score, classify(score), bg.summary())


def impact_score(store: AttributeStore, cfg: ImpactConfig,
                 diagnostics: Diagnostics | None = None) -> ImpactResult:
    starts, ends = background_windows(cfg.event_time, cfg.background_days,
                                      cfg.data_frame_hours, cfg.step_hours)
    ve, vp = cfg.event_windows()
    all_s = np.concatenate([starts, [ve.start, vp.start]])
    all_e = np.concatenate([ends, [ve.end, vp.end]])
    m = build_matrix(store, cfg.feature_set, all_s, all_e, diagnostics)
    series = VectorSeries(cfg.feature_set, starts, ends, m[:-2])
    return _score(series, m[-2:], cfg)


# --------------------------------------------------------------------------
# Temporal sweep

@dataclass
class TemporalCurve:
    feature_set: FeatureSetId
    points: list[tuple[float, float]]
    results: list[ImpactResult] = field(default_factory=list)
    errors: list[tuple[float, str]] = field(default_factory=list)

    @property
    def argmax(self) -> tuple[float, float] | None:
        if not self.points:
            return None
        return max(self.points, key=lambda p: (p[1], -p[0]))

    def spline(self, samples_per_hour: float = 1.0) -> list[tuple[float, float]]:
        """Natural cubic spline through the points, for plotting only."""
        if len(self.points) < 3:
            return list(self.points)
        from scipy.interpolate import CubicSpline
        x = np.array([p[0] for p in self.points], dtype=float)
        y = np.array([p[1] for p in self.points], dtype=float)
        cs = CubicSpline(x, y, bc_type="natural")
        grid = np.linspace(x[0], x[-1], int((x[-1] - x[0]) * samples_per_hour) + 1)
        return [(float(a), float(b)) for a, b in zip(grid, cs(grid))]

    def as_dict(self) -> dict:
        am = self.argmax
        return {"feature_set": self.feature_set.value,
                "points": [{"delay_hours": d, "i_score": s} for d, s in self.points],
                "argmax": None if am is None else {"delay_hours": am[0], "i_score": am[1]},
                "errors": [{"delay_hours": d, "error": msg} for d, msg in self.errors]}


def temporal_sweep(store: AttributeStore, cfg: ImpactConfig,
                   delays: Sequence[float] = DEFAULT_DELAYS,
                   diagnostics: Diagnostics | None = None) -> TemporalCurve:
    """I-Score at each delay ``d`` (gap ``2d``); the background is built once."""
    series = rolling_vectors(store, cfg, diagnostics)
    plans: list[tuple[float, ImpactConfig]] = []
    errors: list[tuple[float, str]] = []
    for d in delays:
        try:
            c = cfg.with_gap(2 * d)
            ve, vp = c.event_windows()
            if not (covers(store, cfg.feature_set, ve.start, ve.end)
                    and covers(store, cfg.feature_set, vp.start, vp.end)):
                raise CoverageError(cfg.feature_set.value, ve.start, vp.end, *store.span)
        except BNSError as exc:
            errors.append((float(d), f"{type(exc).__name__}: {exc}"))
            continue
        plans.append((float(d), c))
    windows = [w for _, c in plans for w in c.event_windows()]
    ev = build_matrix(store, cfg.feature_set, [w.start for w in windows],
                      [w.end for w in windows]) if windows else np.zeros((0, series.matrix.shape[1]))
    points, results = [], []
    for k, (d, c) in enumerate(plans):
        try:
            res = _score(series, ev[2 * k: 2 * k + 2], c)
        except BNSError as exc:
            errors.append((d, f"{type(exc).__name__}: {exc}"))
            continue
        points.append((d, res.i_score))
        results.append(res)
    errors.sort()
    return TemporalCurve(cfg.feature_set, points, results, errors)


# --------------------------------------------------------------------------
# Retrospective scan

@dataclass(frozen=True)
class Spike:
    time: int
    distance: float


@dataclass
class ScanSeries:
    feature_set: FeatureSetId
    times: np.ndarray
    distances: np.ndarray
    spikes: list[Spike] = field(default_factory=list)

    def points(self) -> list[tuple[int, float]]:
        return [(int(t), float(d)) for t, d in zip(self.times, self.distances)]


def rolling_scan(store: AttributeStore, t0: int, t1: int, data_frame_hours: float = 96,
                 step_hours: float = 1, feature_set: FeatureSetId | str = FeatureSetId.OVERALL,
                 measure: DistanceMeasure | str = DistanceMeasure.SQUARED_EUCLIDEAN,
                 diagnostics: Diagnostics | None = None) -> ScanSeries:
    """Distance between the windows just before and just after each grid time."""
    fs = FeatureSetId.parse(feature_set)
    if t1 < t0:
        raise InvalidConfig("scan range end precedes its start")
    step, ldf = _seconds(step_hours), _seconds(data_frame_hours)
    if step <= 0 or ldf <= 0:
        raise InvalidConfig("step and data frame length must be positive")
    centers = t0 + np.arange((t1 - t0) // step + 1, dtype=np.int64) * step
    starts = np.unique(np.concatenate([centers - ldf, centers]))
    m = build_matrix(store, fs, starts, starts + ldf, diagnostics)
    xs = MinMaxScaler.fit(m).transform(m)
    left = np.searchsorted(starts, centers - ldf)
    right = np.searchsorted(starts, centers)
    d = row_distances(xs[left], xs[right], measure)
    return ScanSeries(fs, centers, d)


def detect_spikes(series: ScanSeries | tuple[Sequence[int], Sequence[float]],
                  threshold: float = 0.4, min_separation_hours: float = 48) -> list[Spike]:
    """Local maxima above ``threshold``, taken greedily from the tallest while
    keeping at least ``min_separation_hours`` between accepted spikes."""
    if isinstance(series, ScanSeries):
        times, vals = series.times, series.distances
    else:
        times, vals = series
    t = np.asarray(times, dtype=np.int64)
    v = np.asarray(vals, dtype=np.float64)
    n = v.size
    if n == 0:
        return []
    left = np.concatenate([[-np.inf], v[:-1]])
    right = np.concatenate([v[1:], [-np.inf]])
    cand = np.flatnonzero((v > threshold) & (v >= left) & (v >= right))
    cand = sorted(cand, key=lambda i: (-v[i], t[i]))
    sep = min_separation_hours * HOUR
    chosen: list[int] = []
    for i in cand:
        if all(abs(int(t[i]) - int(t[j])) >= sep for j in chosen):
            chosen.append(i)
    spikes = [Spike(int(t[i]), float(v[i])) for i in sorted(chosen, key=lambda i: t[i])]
    if isinstance(series, ScanSeries):
        series.spikes = spikes
    return spikes
