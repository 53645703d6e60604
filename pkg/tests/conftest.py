"""Shared fixtures and small-instance builders."""

from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import settings

from zonal_market.lp_clearing import build_lp
from zonal_market.market_core import BidLadder, MarketInstance, Producer, Zone
from zonal_market.scenario import build_benchmark

# Fixed example sequences keep the suite reproducible run to run.
settings.register_profile("repro", derandomize=True, print_blob=True)
settings.load_profile("repro")


def one_zone(demand, bids, export=0.0, core=0.0, price_max=100.0):
    """Single-zone instance with one producer per ``(capacity, price)`` bid."""
    producers, ladders = [], []
    for i, (cap, price) in enumerate(bids):
        producers.append(Producer(i, 0, cap, price, capacity_min=0.0, price_max=price_max,
                                  max_bids=1))
        ladders.append(BidLadder(i, ((cap, price),)))
    return MarketInstance((Zone(0, demand, export, core),), tuple(producers), tuple(ladders))


def random_instance(rng, max_zones=2, max_producers=3, max_bids=2, max_vars=None):
    """Small random instance that is feasible by construction."""
    while True:
        Z = int(rng.integers(1, max_zones + 1))
        N = int(rng.integers(1, max_producers + 1))
        producers, ladders = [], []
        for n in range(N):
            K = int(rng.integers(1, max_bids + 1))
            cap_max = float(rng.uniform(20, 100))
            pmin = float(rng.uniform(1, 10))
            producers.append(Producer(n, int(rng.integers(Z)), cap_max, pmin,
                                      capacity_min=1.0, price_max=50.0, max_bids=K))
            caps = rng.uniform(1.0, cap_max / K, K)
            prices = rng.uniform(pmin, 50.0, K)
            ladders.append(BidLadder.from_arrays(n, caps, prices))
        B = sum(len(l) for l in ladders)
        if max_vars is not None and B * Z > max_vars:
            continue
        supply = np.zeros(Z)
        for p, l in zip(producers, ladders):
            supply[p.zone] += l.capacities.sum()
        total = supply.sum()
        zones = []
        for z in range(Z):
            E = float(rng.uniform(0, 40))
            zones.append(Zone(z, 0.0, E, 0.0))
        # Demand no larger than what home supply alone can serve keeps it feasible.
        D = supply * rng.uniform(0.0, 0.9, Z)
        C = D * rng.uniform(0.0, 0.5, Z)
        zones = [Zone(z, float(D[z]), zones[z].export_limit, float(C[z])) for z in range(Z)]
        if total > 0:
            return MarketInstance(tuple(zones), tuple(producers), tuple(ladders))


def vertex_oracle(instance):
    """Minimum clearing cost by enumerating basic solutions of the LP.

    Works on the inequality form with the ``0 <= x <= 1`` bounds as explicit
    rows: every vertex is the solution of ``n`` linearly independent tight
    rows. Returns ``None`` when no feasible vertex exists.
    """
    lp = build_lp(instance)
    n = lp.c.size
    A = np.vstack([lp.A_ub, -np.eye(n), np.eye(n)])
    b = np.concatenate([lp.b_ub, np.zeros(n), np.ones(n)])
    best = None
    scale = max(1.0, np.abs(b).max())
    for rows in itertools.combinations(range(A.shape[0]), n):
        M = A[list(rows)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, b[list(rows)])
        if np.all(A @ x <= b + 1e-9 * scale):
            v = float(lp.c @ x)
            best = v if best is None else min(best, v)
    return best


@pytest.fixture(scope="session")
def benchmark():
    return build_benchmark()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance report ------------------------------------------------------------

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion.

    Soft criteria are reported but never fail the test that measures them.
    """
    def record(number: int, name: str, ok: bool, detail: str = "", soft: bool = False) -> bool:
        verdict = "PASS" if ok else "FAIL"
        kind = " (soft)" if soft else ""
        line = f"[{verdict}] criterion {number:2d}{kind}: {name}" + (f": {detail}" if detail else "")
        _ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
