"""Vector distance measures used to compare network states."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import DimensionMismatch


class DistanceMeasure(str, Enum):
    EUCLIDEAN = "euclidean"
    SQUARED_EUCLIDEAN = "squared_euclidean"
    COSINE = "cosine"
    CANBERRA = "canberra"
    CHEBYSHEV = "chebyshev"


def row_distances(a: np.ndarray, b: np.ndarray,
                  measure: DistanceMeasure | str = DistanceMeasure.SQUARED_EUCLIDEAN) -> np.ndarray:
    """Distance between row ``i`` of ``a`` and row ``i`` of ``b`` for every ``i``."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    m = DistanceMeasure(measure)
    diff = a - b
    if m is DistanceMeasure.SQUARED_EUCLIDEAN:
        return np.sum(diff * diff, axis=1)
    if m is DistanceMeasure.EUCLIDEAN:
        return np.sqrt(np.sum(diff * diff, axis=1))
    if m is DistanceMeasure.CHEBYSHEV:
        if a.shape[1] == 0:
            return np.zeros(a.shape[0])
        return np.max(np.abs(diff), axis=1)
    if m is DistanceMeasure.CANBERRA:
        den = np.abs(a) + np.abs(b)
        terms = np.divide(np.abs(diff), den, out=np.zeros_like(den), where=den > 0)
        return np.sum(terms, axis=1)
    # cosine: 1 - cos(angle); two zero vectors are identical (0), one zero
    # vector against a non-zero one is maximally unrelated (1)
    dot = np.sum(a * b, axis=1)
    na = np.sum(a * a, axis=1)
    nb = np.sum(b * b, axis=1)
    norm = np.sqrt(na * nb)
    out = np.ones(a.shape[0])
    both_zero = (na == 0) & (nb == 0)
    ok = norm > 0
    out[ok] = 1.0 - dot[ok] / norm[ok]
    out[both_zero] = 0.0
    return np.clip(out, 0.0, 2.0)


def distance(p, q, measure: DistanceMeasure | str = DistanceMeasure.SQUARED_EUCLIDEAN) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.ndim != 1 or p.shape != q.shape:
        raise DimensionMismatch(f"lengths {p.shape} and {q.shape} differ")
    return float(row_distances(p[None, :], q[None, :], measure)[0])
