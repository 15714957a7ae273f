"""Result serialisation: JSON, CSV and a dependency-free SVG line chart."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .features import LAYOUT_VERSION, FeatureSetId, feature_names
from .impact import ImpactResult, ScanSeries, Spike, TemporalCurve
from .store import atomic_write


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path: str | os.PathLike, obj) -> Path:
    atomic_write(path, dumps(obj))
    return Path(path)


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    atomic_write(path, out.getvalue())
    return Path(path)


def impact_document(result: ImpactResult) -> dict:
    return result.as_dict()


def write_curve(path: str | os.PathLike, curve: TemporalCurve) -> Path:
    return write_csv(path, ("delay", "i_score"), curve.points)


def sweep_summary(curves: Sequence[TemporalCurve]) -> dict:
    out = {}
    for c in curves:
        am = c.argmax
        out[c.feature_set.value] = {
            "argmax": None if am is None else {"delay_hours": am[0], "i_score": am[1]},
            "points": len(c.points),
            "errors": [{"delay_hours": d, "error": e} for d, e in c.errors],
        }
    return out


def write_scan(path: str | os.PathLike, series: ScanSeries) -> Path:
    return write_csv(path, ("timestamp", "distance"), series.points())


def spikes_document(spikes: Sequence[Spike], threshold: float, min_separation_hours: float) -> dict:
    return {"threshold": threshold, "min_separation_hours": min_separation_hours,
            "spikes": [{"timestamp": s.time, "distance": s.distance} for s in spikes]}


def write_vectors(csv_path: str | os.PathLike, manifest_path: str | os.PathLike,
                  feature_set: FeatureSetId, starts: np.ndarray, ends: np.ndarray,
                  matrix: np.ndarray) -> tuple[Path, Path]:
    names = feature_names(feature_set)
    rows = ([int(s), int(e), *row] for s, e, row in zip(starts, ends, matrix.tolist()))
    write_csv(csv_path, ("start", "end", *names), rows)
    doc = {"feature_set": feature_set.value, "layout_version": LAYOUT_VERSION,
           "features": names, "windows": len(starts),
           "first_start": int(starts[0]) if len(starts) else None,
           "last_end": int(ends[-1]) if len(ends) else None}
    write_json(manifest_path, doc)
    return Path(csv_path), Path(manifest_path)


# --------------------------------------------------------------------------
# SVG

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_chart(series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
              overlays: Sequence[tuple[str, Sequence[float], Sequence[float]]] = (),
              title: str = "", x_label: str = "", y_label: str = "",
              hlines: Sequence[float] = (), width: int = 800, height: int = 400) -> str:
    """Line chart with raw points as markers and optional smooth overlays."""
    pad_l, pad_r, pad_t, pad_b = 60, 140, 30, 45
    xs = [x for _, a, _ in [*series, *overlays] for x in a]
    ys = [y for _, _, b in [*series, *overlays] for y in b] + list(hlines)
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def px(x: float) -> float:
        return pad_l + (x - x0) / (x1 - x0) * pw

    def py(y: float) -> float:
        return pad_t + (1 - (y - y0) / (y1 - y0)) * ph

    def pts(a, b) -> str:
        return " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(a, b))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    if title:
        out.append(f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" font-size="13">{_esc(title)}</text>')
    for i in range(5):
        fy = y0 + (y1 - y0) * i / 4
        fx = x0 + (x1 - x0) * i / 4
        out.append(f'<text x="{pad_l - 5}" y="{py(fy) + 4:.2f}" text-anchor="end">{fy:.3g}</text>')
        out.append(f'<text x="{px(fx):.2f}" y="{pad_t + ph + 15}" text-anchor="middle">{fx:.4g}</text>')
    if x_label:
        out.append(f'<text x="{pad_l + pw / 2:.0f}" y="{height - 8}" text-anchor="middle">{_esc(x_label)}</text>')
    if y_label:
        out.append(f'<text x="14" y="{pad_t + ph / 2:.0f}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {pad_t + ph / 2:.0f})">{_esc(y_label)}</text>')
    for h in hlines:
        out.append(f'<line x1="{pad_l}" x2="{pad_l + pw}" y1="{py(h):.2f}" y2="{py(h):.2f}" '
                   f'stroke="#999" stroke-dasharray="4 3"/>')
    for i, (label, a, b) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1" points="{pts(a, b)}"/>')
        if len(a) <= 400:
            out.extend(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="1.8" fill="{color}"/>'
                       for x, y in zip(a, b))
        ly = pad_t + 14 * (i + 1)
        out.append(f'<text x="{pad_l + pw + 10}" y="{ly}" fill="{color}">{_esc(label)}</text>')
    for i, (label, a, b) in enumerate(overlays):
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                   f'stroke-opacity="0.6" points="{pts(a, b)}"/>')
    out.append("</svg>\n")
    return "\n".join(out)


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def sweep_svg(curves: Sequence[TemporalCurve], title: str = "", spline: bool = True) -> str:
    series = [(c.feature_set.value, [p[0] for p in c.points], [p[1] for p in c.points])
              for c in curves]
    overlays = []
    if spline:
        for c in curves:
            s = c.spline()
            overlays.append((c.feature_set.value, [p[0] for p in s], [p[1] for p in s]))
    return svg_chart(series, overlays, title, "hours after event", "I-Score",
                     hlines=(1.0, 1.9, 2.9))


def scan_svg(series: ScanSeries, threshold: float, title: str = "") -> str:
    days = (series.times - series.times[0]) / 86400 if series.times.size else series.times
    return svg_chart([(series.feature_set.value, days.tolist(), series.distances.tolist())],
                     title=title, x_label="days from scan start", y_label="distance",
                     hlines=(threshold,))
