"""Shared fixtures: statistics contexts are expensive (Abel series plus a
Galerkin solve), so one session-scoped factory caches them per parameter
tuple and every test file draws from the same pool."""

import pytest

from intermittent.map_model import lsv
from intermittent.statistics import build_context


@pytest.fixture(scope="session")
def make_context():
    cache = {}

    def get(alpha, N=128, abel_order=40):
        key = (alpha, N, abel_order)
        if key not in cache:
            cache[key] = build_context(lsv(alpha), N=N, abel_order=abel_order)
        return cache[key]

    return get
