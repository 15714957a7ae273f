from __future__ import annotations

import math

import numpy as np
import pytest

from bns.errors import CoverageError, DegenerateBackground, InsufficientWindows, InvalidConfig
from bns.features import FeatureSetId, build_matrix
from bns.impact import (SCALE_QUANTUM, ImpactConfig, MinMaxScaler, ScanSeries, background_distribution,
                        background_windows, classify, detect_spikes, i_score, impact_score,
                        pair_offset, rolling_scan, rolling_vectors, temporal_sweep)
from bns.distance import row_distances
from bns.synth import EventEffect, generate
from bns.store import AttributeStore

from conftest import DAY, HOUR, random_store, small_params


def _cfg(ldf=96, gap=0, lb=120, step=1, **kw):
    return ImpactConfig(event_time=kw.pop("t", 0), data_frame_hours=ldf, gap_hours=gap,
                        background_days=lb, step_hours=step, **kw)


def test_background_vector_counts():
    assert background_windows(0, 120, 96, 1)[0].size == 2785
    assert background_windows(0, 4, 96, 1)[0].size == 1
    assert background_windows(0, 110, 96, 1)[0].size == 2545


def test_background_windows_tile_period():
    t = 10 * DAY
    starts, ends = background_windows(t, 120, 96, 1)
    assert starts[0] == t - 60 * DAY
    assert ends[-1] == t + 60 * DAY
    assert np.all(np.diff(starts) == HOUR) and np.all(ends - starts == 96 * HOUR)


def test_pair_offsets():
    assert pair_offset(_cfg(96, 0)) == 96
    assert pair_offset(_cfg(4, 2, lb=10 / 24)) == 6
    assert pair_offset(_cfg(96, 8)) == 104
    assert pair_offset(_cfg(96, 8, step=4)) == 26


def test_invalid_configs():
    with pytest.raises(InvalidConfig):
        _cfg(5, 0, step=2)
    with pytest.raises(InvalidConfig):
        _cfg(96, 0, lb=7)
    with pytest.raises(InvalidConfig):
        _cfg(0, 0)
    with pytest.raises(InvalidConfig):
        _cfg(96, -2)
    with pytest.raises(InvalidConfig):
        _cfg(96, 0, feature_set="Mining")


def test_background_pair_counts():
    x = np.random.default_rng(0).random((2785, 23))
    assert background_distribution(x, _cfg()).pair_count == 2689
    small = _cfg(4, 2, lb=10 / 24)
    starts, _ = background_windows(0, 10 / 24, 4, 1)
    assert starts.size == 7
    bg = background_distribution(np.random.default_rng(1).random((7, 5)), small)
    assert bg.pair_count == 1


def test_insufficient_windows():
    with pytest.raises(InsufficientWindows):
        background_distribution(np.zeros((96, 3)), _cfg())


def _brute_pairs(starts, ends, gap_s):
    return [(i, j) for i in range(len(starts)) for j in range(len(starts))
            if starts[j] - ends[i] == gap_s]


def test_pairing_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(40):
        step = int(rng.choice([1, 2, 4]))
        ldf = step * int(rng.integers(1, 96 // step + 1))
        gap = step * int(rng.integers(0, 48 // step + 1))
        lb = (2 * ldf + gap + step * int(rng.integers(0, 30))) / 24
        cfg = _cfg(ldf, gap, lb, step)
        starts, ends = background_windows(0, lb, ldf, step)
        x = rng.random((starts.size, 4))
        bg = background_distribution(x, cfg)
        xs = bg.scaler.transform(x)
        pairs = _brute_pairs(starts.tolist(), ends.tolist(), gap * HOUR)
        want = [float(np.sum((xs[i] - xs[j]) ** 2)) for i, j in pairs]
        assert bg.distances.tolist() == want


def test_identical_vectors_degenerate():
    bg = background_distribution(np.ones((300, 23)), _cfg(96, 0, lb=10))
    assert np.all(bg.distances == 0) and bg.median == 0 and bg.std == 0
    with pytest.raises(DegenerateBackground):
        i_score(0.0, bg)


def test_i_score_fixtures():
    b = np.array([1.0, 2, 3, 4, 5])
    assert i_score(6.0, b) == pytest.approx(3 / math.sqrt(2), abs=1e-12)
    assert classify(i_score(6.0, b)) == "substantial"
    assert i_score(3.0, b) == 0.0


def test_classification_thresholds():
    assert [classify(x) for x in (0.99, 1.0, 1.01, 1.9, 1.91, 2.9, 2.91, -5)] == [
        "none", "none", "discernible", "discernible", "substantial", "substantial",
        "significant", "none"]


def test_scaler_unit_interval_and_constant_columns():
    rng = np.random.default_rng(3)
    x = rng.normal(0, 5, (200, 6))
    x[:, 2] = 4.0
    z = MinMaxScaler.fit(x).transform(x)
    assert z.min() >= 0 and z.max() <= 1
    assert np.all(z[:, 2] == 0)
    ref = (x - x.min(0)) / np.where(np.ptp(x, 0) > 0, np.ptp(x, 0), 1)
    assert np.abs(z - ref).max() <= SCALE_QUANTUM / 2


def test_affine_invariance_of_scores():
    rng = np.random.default_rng(4)
    cfg = _cfg(6, 2, lb=3, step=1)
    for _ in range(20):
        x = rng.lognormal(0, 1, (72 - 6 + 1, 8))
        ev = rng.lognormal(0, 1, (2, 8))
        j, a, b = int(rng.integers(8)), float(rng.uniform(0.01, 100)), float(rng.normal(0, 50))
        y, ey = x.copy(), ev.copy()
        y[:, j] = a * y[:, j] + b
        ey[:, j] = a * ey[:, j] + b
        b1 = background_distribution(x, cfg, ev)
        b2 = background_distribution(y, cfg, ey)
        assert b1.distances.tobytes() == b2.distances.tobytes()
        d1 = row_distances(*b1.scaler.transform(ev)[:, None, :])[0]
        d2 = row_distances(*b2.scaler.transform(ey)[:, None, :])[0]
        assert d1 == d2 and i_score(d1, b1) == i_score(d2, b2)


def test_i_score_sign():
    rng = np.random.default_rng(5)
    b = rng.random(100)
    md = float(np.median(b))
    for delta in rng.random(50) * 2:
        assert (delta > md) == (i_score(float(delta), b) > 0)


def test_straddling_exclusion():
    t = 5 * DAY
    cfg = _cfg(24, 0, lb=6, t=t, exclude_straddling=True)
    starts, ends = background_windows(t, 6, 24, 1)
    x = np.random.default_rng(6).random((starts.size, 3))
    bg = background_distribution(x, cfg, starts=starts)
    pairs = [(i, j) for i, j in _brute_pairs(starts.tolist(), ends.tolist(), 0)
             if not (starts[i] < t < ends[j])]
    assert bg.pair_count == len(pairs)
    assert background_distribution(x, _cfg(24, 0, lb=6, t=t)).pair_count > bg.pair_count
    with pytest.raises(InvalidConfig):
        background_distribution(x, cfg)


def test_event_windows_centred_on_gap():
    ve, vp = _cfg(96, 8, t=1000 * HOUR).event_windows()
    assert (ve.start, ve.end) == (900 * HOUR, 996 * HOUR)
    assert (vp.start, vp.end) == (1004 * HOUR, 1100 * HOUR)


def test_impact_detects_injected_shock(shock_batch, shock_store):
    p, _ = shock_batch
    res = impact_score(shock_store, ImpactConfig(p.at_day(12), 24, 0, 20))
    assert res.i_score > 1.9
    assert res.classification in ("substantial", "significant")
    assert res.background["pair_count"] == 20 * 24 - 24 + 1 - 24
    doc = res.as_dict()
    assert set(doc) >= {"config", "event_distance", "background", "i_score", "classification"}


def test_impact_matches_manual_pipeline():
    store = random_store(np.random.default_rng(7), span=(0, 30 * DAY))
    cfg = _cfg(48, 4, lb=10, t=15 * DAY, feature_set="Fee")
    res = impact_score(store, cfg)
    vec = rolling_vectors(store, cfg)
    ve, vp = cfg.event_windows()
    ev = build_matrix(store, "Fee", [ve.start, vp.start], [ve.end, vp.end])
    bg = background_distribution(vec, cfg, ev)
    e = bg.scaler.transform(ev)
    delta = float(np.sum((e[0] - e[1]) ** 2))
    assert res.event_distance == delta
    assert res.i_score == (delta - float(np.median(bg.distances))) / float(np.std(bg.distances)) \
        or res.i_score == pytest.approx((delta - np.median(bg.distances)) / np.std(bg.distances), rel=1e-12)


def test_impact_coverage_error():
    store = random_store(np.random.default_rng(8), span=(0, 30 * DAY))
    with pytest.raises(CoverageError):
        impact_score(store, _cfg(96, 0, lb=120, t=15 * DAY))


def test_impact_deterministic_across_threads(monkeypatch):
    store = random_store(np.random.default_rng(9), span=(0, 30 * DAY))
    cfg = _cfg(24, 0, lb=10, t=15 * DAY, feature_set="Full")
    monkeypatch.setenv("BNS_THREADS", "1")
    a = impact_score(store, cfg).as_dict()
    monkeypatch.setenv("BNS_THREADS", "8")
    assert impact_score(store, cfg).as_dict() == a


def test_sweep_grid_and_gaps():
    store = random_store(np.random.default_rng(10), span=(0, 40 * DAY), n=2000)
    curve = temporal_sweep(store, _cfg(96, 0, lb=30, t=20 * DAY))
    assert len(curve.points) == 121 and not curve.errors
    assert [d for d, _ in curve.points] == list(range(0, 241, 2))
    assert curve.results[0].config.gap_hours == 0
    assert curve.results[-1].config.gap_hours == 480
    d, best = curve.argmax
    assert best == max(i for _, i in curve.points)


def test_sweep_reports_failed_delays():
    # a 20 d background holds both event windows only up to a 144 h delay,
    # and at exactly 144 h a single background pair remains
    store = random_store(np.random.default_rng(11), span=(0, 25 * DAY), n=1500)
    curve = temporal_sweep(store, _cfg(96, 0, lb=20, t=int(12.5 * DAY)))
    assert [d for d, _ in curve.points] == list(range(0, 143, 2))
    assert [d for d, _ in curve.errors] == list(range(144, 241, 2))
    assert "DegenerateBackground" in curve.errors[0][1]
    assert all("InvalidConfig" in e for _, e in curve.errors[1:])


def test_sweep_coverage_error():
    store = random_store(np.random.default_rng(16), span=(0, 25 * DAY), n=500)
    with pytest.raises(CoverageError):
        temporal_sweep(store, _cfg(96, 0, lb=30, t=int(12.5 * DAY)))


def test_sweep_spline_passes_through_points():
    store = random_store(np.random.default_rng(12), span=(0, 30 * DAY), n=1500)
    curve = temporal_sweep(store, _cfg(48, 0, lb=10, t=15 * DAY), delays=range(0, 49, 4))
    spline = dict(curve.spline())
    for d, i in curve.points:
        assert spline[d] == pytest.approx(i, abs=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sweep_argmax_tracks_injected_lag(seed):
    lag = 30
    p = small_params(seed=seed, days=12, block_cap=0.3)
    t = p.at_day(6)
    batch = generate(p, [EventEffect(t + lag * HOUR, duration_hours=24, multipliers={"tx_rate": 3.0})])
    curve = temporal_sweep(AttributeStore.from_batch(batch), ImpactConfig(t, 24, 0, 8),
                           delays=range(0, 61, 2))
    assert abs(curve.argmax[0] - lag) <= 4


def test_scan_point_count():
    store = random_store(np.random.default_rng(13), span=(0, 40 * DAY), n=1500)
    s = rolling_scan(store, 5 * DAY, 35 * DAY, data_frame_hours=96, step_hours=1)
    assert s.times.size == 30 * 24 + 1 == s.distances.size
    assert s.times[0] == 5 * DAY and s.times[-1] == 35 * DAY
    assert np.all(s.distances >= 0)
    with pytest.raises(CoverageError):
        rolling_scan(store, 2 * DAY, 35 * DAY)


def test_scan_distance_matches_direct_pair():
    store = random_store(np.random.default_rng(14), span=(0, 20 * DAY), n=1500)
    s = rolling_scan(store, 5 * DAY, 15 * DAY, data_frame_hours=24, step_hours=6)
    starts = np.unique(np.concatenate([s.times - 24 * HOUR, s.times]))
    m = build_matrix(store, FeatureSetId.OVERALL, starts, starts + 24 * HOUR)
    xs = MinMaxScaler.fit(m).transform(m)
    k = 7
    i, j = np.searchsorted(starts, [s.times[k] - 24 * HOUR, s.times[k]])
    assert s.distances[k] == float(np.sum((xs[i] - xs[j]) ** 2))


def test_scan_peaks_near_injection(shock_batch, shock_store):
    p, _ = shock_batch
    s = rolling_scan(shock_store, p.start + 5 * DAY, p.start + 19 * DAY)
    peak = int(s.times[np.argmax(s.distances)])
    assert abs(peak - p.at_day(12)) <= 96 * HOUR


def _greedy_oracle(times, vals, threshold, sep_h):
    n = len(vals)
    peaks = []
    for i in range(n):
        left = vals[i - 1] if i > 0 else -math.inf
        right = vals[i + 1] if i < n - 1 else -math.inf
        if vals[i] > threshold and vals[i] >= left and vals[i] >= right:
            peaks.append(i)
    chosen = []
    while peaks:
        best = max(peaks, key=lambda i: (vals[i], -times[i]))
        chosen.append(best)
        peaks = [i for i in peaks if i != best and abs(times[i] - times[best]) >= sep_h * HOUR]
    return sorted((times[i], vals[i]) for i in chosen)


def test_spike_examples():
    t = np.arange(200) * HOUR
    assert detect_spikes((t, np.full(200, 0.1))) == []
    v = np.full(200, 0.1)
    v[80] = 0.7
    assert [(s.time, s.distance) for s in detect_spikes((t, v))] == [(80 * HOUR, 0.7)]
    v[90] = 0.5
    v[100] = 0.6
    assert [s.distance for s in detect_spikes((t, v))] == [0.7]
    w = np.full(200, 0.1)
    w[50], w[60] = 0.6, 0.5
    assert [(s.time, s.distance) for s in detect_spikes((t, w))] == [(50 * HOUR, 0.6)]


def test_spikes_match_oracle():
    rng = np.random.default_rng(15)
    for _ in range(60):
        n = int(rng.integers(1, 400))
        t = np.arange(n) * HOUR
        v = rng.gamma(1.0, 0.2, n)
        sep = float(rng.choice([0, 6, 48]))
        got = [(s.time, s.distance) for s in detect_spikes((t, v), 0.4, sep)]
        assert got == _greedy_oracle(t.tolist(), v.tolist(), 0.4, sep)


def test_spikes_attach_to_series():
    s = ScanSeries(FeatureSetId.OVERALL, np.arange(5) * HOUR, np.array([0, 1, 0, 0, 0.0]))
    detect_spikes(s)
    assert s.spikes[0].time == HOUR
