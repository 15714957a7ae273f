from __future__ import annotations

import numpy as np
import pytest
from scipy.spatial import distance as spd

from bns.distance import DistanceMeasure, distance, row_distances
from bns.errors import DimensionMismatch


def test_examples():
    assert distance([0, 0], [0, 0]) == 0
    assert distance([1, 2, 3], [0, 0, 0], "squared_euclidean") == 14
    assert distance([0.2, 0.9], [0.5, 0.1], "chebyshev") == pytest.approx(0.8)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        distance([1, 2], [1, 2, 3])
    with pytest.raises(DimensionMismatch):
        row_distances(np.zeros((2, 3)), np.zeros((3, 3)))


def test_against_scipy():
    rng = np.random.default_rng(0)
    ref = {"euclidean": spd.euclidean, "squared_euclidean": spd.sqeuclidean,
           "cosine": spd.cosine, "canberra": spd.canberra, "chebyshev": spd.chebyshev}
    for _ in range(50):
        p, q = rng.random(23), rng.random(23)
        for name, fn in ref.items():
            assert distance(p, q, name) == pytest.approx(fn(p, q), rel=1e-12, abs=1e-14)


def test_cosine_zero_vectors():
    assert distance([0, 0], [0, 0], "cosine") == 0
    assert distance([0, 0], [1, 0], "cosine") == 1


def test_row_distances_match_single():
    rng = np.random.default_rng(1)
    a, b = rng.random((20, 7)), rng.random((20, 7))
    for m in DistanceMeasure:
        rows = row_distances(a, b, m)
        assert rows.tolist() == pytest.approx([distance(x, y, m) for x, y in zip(a, b)], rel=1e-15)
