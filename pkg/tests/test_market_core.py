import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zonal_market.market_core import (BidLadder, MarketInstance, Producer, Zone, market_cost,
                                      producer_revenue, repair_capacities, revenues,
                                      validate_ladder)


@pytest.fixture
def producer0():
    return Producer(0, 0, 700, 7)


def test_marginal_ladder_is_valid(producer0):
    assert validate_ladder(BidLadder(0, ((700, 7),)), producer0) == []
    assert producer0.marginal_ladder().pairs == ((700.0, 7.0),)


def test_capacity_under_floor_is_reported(producer0):
    v = validate_ladder(BidLadder(0, ((3, 7),)), producer0)
    assert [x.rule for x in v] == ["capacity_bound"]
    assert v[0].bid == 0


def test_total_capacity_over_cap_is_reported(producer0):
    v = validate_ladder(BidLadder(0, ((400, 7), (400, 8))), producer0)
    assert [x.rule for x in v] == ["total_capacity"]


def test_price_and_bid_count_violations(producer0):
    v = validate_ladder(BidLadder(0, ((10, 6.5),)), producer0)
    assert [x.rule for x in v] == ["price_bound"]
    too_many = BidLadder(0, tuple((10, 7) for _ in range(6)))
    assert "max_bids" in [x.rule for x in validate_ladder(too_many, producer0)]


def test_validate_rejects_foreign_ladder(producer0):
    with pytest.raises(ValueError):
        validate_ladder(BidLadder(1, ((10, 7),)), producer0)


def test_producer_revenue_examples():
    assert producer_revenue(BidLadder(0, ((100, 10),)), [[0.25, 0.25]]) == 500
    assert producer_revenue(BidLadder(0, ((100, 10), (5, 3))), np.zeros((2, 2))) == 0
    assert producer_revenue(BidLadder(0, ((50, 10), (30, 20))), [1.0, 0.5]) == 800


def test_producer_revenue_shape_mismatch():
    with pytest.raises(ValueError):
        producer_revenue(BidLadder(0, ((50, 10),)), [1.0, 0.5])


def _two_producer_instance():
    zones = (Zone(0, 100, 0, 0),)
    prods = (Producer(0, 0, 100, 5, capacity_min=0), Producer(1, 0, 100, 5, capacity_min=0))
    ladders = (BidLadder(0, ((50, 10), (30, 20))), BidLadder(1, ((20, 10),)))
    return MarketInstance(zones, prods, ladders)


def test_market_cost_examples():
    inst = _two_producer_instance()
    x = np.zeros((2, 2, 1))
    assert market_cost(inst, x) == 0
    x[0, 0, 0], x[0, 1, 0], x[1, 0, 0] = 1.0, 0.5, 1.0
    assert revenues(inst, x).tolist() == [800.0, 200.0]
    assert market_cost(inst, x) == 1000
    single = MarketInstance((Zone(0, 50, 0, 0),), (Producer(0, 0, 100, 5),),
                            (BidLadder(0, ((100, 10),)),))
    assert market_cost(single, np.full((1, 1, 1), 0.5)) == 500


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3),
       st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_cost_equals_sum_of_revenues(a, b):
    inst = _two_producer_instance()
    x = np.zeros((2, 2, 1))
    x[0, 0, 0], x[0, 1, 0], x[1, 0, 0] = a[0], a[1], a[2]
    assert market_cost(inst, x) == sum(
        producer_revenue(l, x[n, :len(l)]) for n, l in enumerate(inst.ladders))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 2000, allow_nan=False), min_size=1, max_size=5))
def test_repair_capacities_fits_box(caps):
    p = Producer(0, 0, 700, 7)
    out = repair_capacities(caps, p)
    assert np.all(out >= p.capacity_min - 1e-9)
    assert np.all(out <= p.capacity_max + 1e-9)
    assert out.sum() <= p.capacity_max * (1 + 1e-12)
    ladder = BidLadder.from_arrays(0, out, np.full(len(caps), 7.0))
    assert validate_ladder(ladder, p) == []


def test_repair_keeps_feasible_ladder():
    p = Producer(0, 0, 700, 7)
    np.testing.assert_array_equal(repair_capacities([100, 200], p), [100, 200])


def test_repair_rejects_impossible_floor():
    p = Producer(0, 0, 12, 7, capacity_min=5)
    with pytest.raises(ValueError):
        repair_capacities([5, 5, 5], p)


def test_zone_and_producer_validation():
    with pytest.raises(ValueError):
        Zone(0, -1, 0, 0)
    with pytest.raises(ValueError):
        Producer(0, 0, 100, 10, price_max=5)


def test_instance_helpers(benchmark):
    assert benchmark.n_zones == 2 and benchmark.n_producers == 8
    assert benchmark.producers_in(1) == [2, 3, 7]
    np.testing.assert_array_equal(benchmark.producer_zone, [0, 0, 1, 1, 0, 0, 0, 1])
    assert benchmark.capacity_matrix().shape == (8, 1)
    moved = benchmark.with_demand([10, 200]).with_export_limits([1, 2])
    assert moved.demand.tolist() == [10, 200]
    assert moved.export_limit.tolist() == [1, 2]
    assert benchmark.demand.tolist() == [2103, 225]
