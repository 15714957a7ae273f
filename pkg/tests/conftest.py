from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from bns.data import AttributeKey
from bns.store import AttributeStore
from bns.synth import EventEffect, SynthParams, generate

HOUR = 3600
DAY = 86400
FIXTURES = Path(__file__).parent / "fixtures"


def small_params(seed: int = 0, days: float = 24.0, **kw) -> SynthParams:
    """A scaled-down generator setup that runs in a couple of seconds."""
    base = dict(seed=seed, duration_days=days, tx_rate=0.1, block_cap=0.03, size_max=10_000)
    base.update(kw)
    return SynthParams(**base)


def random_store(rng: np.random.Generator, span: tuple[int, int] = (0, 20 * DAY),
                 n: int = 3000, n_addresses: int = 400) -> AttributeStore:
    """Every attribute key with uniformly scattered records over ``span``."""
    lo, hi = span
    series = {}
    for key in AttributeKey:
        m = n if key is not AttributeKey.ADDRESS_EVENT else 2 * n
        ts = np.sort(rng.integers(lo, hi, m))
        if key is AttributeKey.ADDRESS_EVENT:
            vals = rng.integers(0, n_addresses, m).astype(float)
        elif key is AttributeKey.NONSTANDARD_FLAG:
            vals = (rng.random(m) < 0.05).astype(float)
        elif key is AttributeKey.TX_VALUE:
            vals = np.exp(rng.normal(-2, 2, m))
        else:
            vals = rng.gamma(2.0, 3.0, m)
        series[key] = (ts, vals)
    cov = {k: span for k in series}
    return AttributeStore(series, cov, [f"a{i}" for i in range(n_addresses)])


@pytest.fixture(scope="session")
def shock_batch():
    p = small_params(seed=11, days=24)
    return p, generate(p, [EventEffect(p.at_day(12), multipliers={"tx_rate": 3.0},
                                       duration_hours=48)])


@pytest.fixture(scope="session")
def shock_store(shock_batch):
    return AttributeStore.from_batch(shock_batch[1])
