import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import one_zone
from zonal_market.equilibrium import (EquilibriumReport, GridConfig, PenaltySchedule,
                                      StrategyProfile, apply_best_response, best_response,
                                      equivalence_hypothesis_holds, gauss_seidel_run,
                                      initial_profile, penalized_objective, potential_solve,
                                      potential_value, profile_distance, residual_instance,
                                      split_marginal_ladder, tau_schedule, tracking_terms,
                                      vgne_gap)
from zonal_market.lp_clearing import clear_market, kkt_residual
from zonal_market.market_core import (BidLadder, MarketInstance, Producer, Zone, market_cost,
                                      validate_ladder)


def monopolist(demand=50.0):
    p = Producer(0, 0, 100, 10, capacity_min=0.0, price_max=100, max_bids=1)
    return MarketInstance((Zone(0, demand, 0, 0),), (p,), (p.marginal_ladder(),))


def duopoly(demand=100.0, export=0.0):
    prods = tuple(Producer(n, 0, 100, 10, capacity_min=0.0, price_max=100, max_bids=1)
                  for n in range(2))
    ladders = (BidLadder(0, ((100, 50),)), BidLadder(1, ((100, 50),)))
    return MarketInstance((Zone(0, demand, export, 0),), prods, ladders)


# Tracking terms ---------------------------------------------------------------

def test_tracking_single_producer_sees_whole_market():
    inst = monopolist()
    t = tracking_terms(inst, initial_profile(inst, inst.ladders), 0)
    assert t.demand.tolist() == [50] and t.export.tolist() == [0] and t.core.tolist() == [0]


def test_tracking_opponent_serving_zone():
    inst = one_zone(100, [(100, 5), (100, 10)])
    prof = initial_profile(inst, inst.ladders)
    assert tracking_terms(inst, prof, 1).demand[0] == pytest.approx(0)


def test_tracking_export_room():
    zones = (Zone(0, 0, 80, 0), Zone(1, 30, 0, 0))
    prods = tuple(Producer(n, 0, 50, 1, capacity_min=0) for n in range(3))
    ladders = tuple(BidLadder(n, ((50, 1),)) for n in range(3))
    inst = MarketInstance(zones, prods, ladders)
    x = np.zeros((3, 1, 2))
    x[0, 0, 1], x[1, 0, 1] = 0.4, 0.2  # 20 + 10 MW exported
    prof = StrategyProfile(ladders, x, np.zeros((3, 2)), np.zeros((3, 1)), np.zeros(3),
                           np.zeros(3))
    assert tracking_terms(inst, prof, 2).export[0] == pytest.approx(50)


def test_residual_instance_uses_home_rows_only():
    inst = one_zone(100, [(100, 5), (100, 10)], export=10, core=30)
    prof = initial_profile(inst, inst.ladders)
    t = tracking_terms(inst, prof, 1)
    r = residual_instance(inst, t, 1, inst.ladders[1])
    assert r.n_producers == 1 and r.producers[0].id == 0
    assert r.zones[0].demand == pytest.approx(0)


# Best response ---------------------------------------------------------------

def test_monopolist_bids_price_cap():
    inst = monopolist()
    br = best_response(inst, initial_profile(inst, inst.ladders), 0)
    assert br.ladder.prices[0] == pytest.approx(100)
    assert br.revenue == pytest.approx(5000)


def test_priced_out_producer_returns_floor_capacity():
    prods = (Producer(0, 0, 100, 2, capacity_min=0, max_bids=1),
             Producer(1, 0, 100, 50, capacity_min=5, max_bids=1))
    ladders = (BidLadder(0, ((100, 2),)), BidLadder(1, ((100, 50),)))
    inst = MarketInstance((Zone(0, 80, 0, 0),), prods, ladders)
    prof = initial_profile(inst, ladders)
    for lower in ("market", "residual"):
        br = best_response(inst, prof, 1, lower_level=lower)
        assert br.revenue == pytest.approx(0)
        assert br.ladder.capacities.tolist() == [5.0]


def test_symmetric_duopoly_undercuts_by_one_grid_step():
    inst = duopoly()
    br = best_response(inst, initial_profile(inst, inst.ladders), 0)
    assert br.ladder.prices[0] < 50
    assert br.ladder.prices[0] > 49  # within the refined grid step
    assert br.revenue == pytest.approx(100 * br.ladder.prices[0])
    # Revenue is 100*price below the opponent's 50 and 0 above it, so the best
    # point of the coarse price grid is beaten and the loss to the supremum
    # 5000 is at most one refined grid step.
    coarse = 10 * 10 ** np.linspace(0, 1, 16)
    revs = [clear_market(inst.with_ladder(0, BidLadder(0, ((100, p),))), tiebreak=0).revenue[0]
            for p in coarse]
    assert br.revenue >= max(revs)
    step = 50 * (10 ** (1 / 15) - 1) * (2 / 7) ** 2
    assert 5000 - br.revenue <= 100 * step


def test_best_response_ladder_is_admissible(benchmark):
    prof = initial_profile(benchmark)
    for n in (0, 2):
        br = best_response(benchmark, prof, n, lower_level="residual")
        assert validate_ladder(br.ladder, benchmark.producers[n]) == []
        assert br.revenue >= 0
        assert br.objective == pytest.approx(br.revenue)  # no proximal or penalty term


def test_best_response_rejects_bad_lower_level():
    inst = monopolist()
    with pytest.raises(ValueError):
        best_response(inst, initial_profile(inst, inst.ladders), 0, lower_level="nlp")


def test_proximal_term_holds_ladder():
    inst = monopolist()
    prof = initial_profile(inst, inst.ladders)
    br = best_response(inst, prof, 0, tau=1e6)
    assert br.ladder.pairs == prof.ladders[0].pairs


def test_large_penalty_returns_feasible_ladder(rng):
    # Penalized best response with a large M never leaves demand uncovered.
    for _ in range(10):
        cap = float(rng.uniform(50, 100))
        D = float(rng.uniform(20, 0.9 * 2 * cap))
        prods = tuple(Producer(n, 0, cap, float(rng.uniform(1, 10)), capacity_min=1.0,
                               price_max=50, max_bids=1) for n in range(2))
        ladders = tuple(p.marginal_ladder() for p in prods)
        inst = MarketInstance((Zone(0, D, 0, 0),), prods, ladders)
        prof = initial_profile(inst, ladders)
        br = best_response(inst, prof, 0, penalty=1e4)
        assert br.shortfall == pytest.approx(0, abs=1e-9)
        new = apply_best_response(inst, prof, 0, br)
        assert penalized_objective(inst, new, 1e4)[0] == pytest.approx(
            penalized_objective(inst, new, 0)[0])


# Profile helpers ---------------------------------------------------------------

def test_split_marginal_ladder_respects_floor():
    p = Producer(0, 0, 12, 7, capacity_min=5, max_bids=5)
    lad = split_marginal_ladder(p)
    assert len(lad) == 2 and validate_ladder(lad, p) == []
    assert lad.capacities.sum() == pytest.approx(12)


def test_potential_value_examples():
    single = one_zone(50, [(100, 10)])
    prof = initial_profile(single, single.ladders)
    assert potential_value(single, prof) == pytest.approx(500)
    zero = StrategyProfile(prof.ladders, np.zeros_like(prof.fractions), prof.demand_duals,
                           prof.capacity_duals, prof.export_duals, prof.core_duals)
    assert potential_value(single, zero) == 0
    two = one_zone(150, [(100, 5), (100, 10)])
    prof2 = initial_profile(two, two.ladders)
    assert potential_value(two, prof2) == pytest.approx(clear_market(two).total_cost)
    assert potential_value(two, prof2) == pytest.approx(1000)


def test_penalized_objective_examples():
    inst = one_zone(50, [(100, 10)])
    prof = initial_profile(inst, inst.ladders)
    np.testing.assert_allclose(penalized_objective(inst, prof, 100), [500])
    short = StrategyProfile(prof.ladders, prof.fractions * 0.8, prof.demand_duals,
                            prof.capacity_duals, prof.export_duals, prof.core_duals)
    # 40 MW served: 10 MW shortfall.
    np.testing.assert_allclose(penalized_objective(inst, short, 100), [400 - 1000])
    np.testing.assert_allclose(penalized_objective(inst, short, 0), [400])
    with pytest.raises(ValueError):
        penalized_objective(inst, short, -1)


def _report(lam):
    prof = StrategyProfile((), np.zeros((len(lam), 1, 1)), np.array(lam, dtype=float)[:, None],
                           np.zeros((len(lam), 1)), np.zeros(len(lam)), np.zeros(len(lam)))
    return EquilibriumReport("x", prof, 0.0, np.zeros(len(lam)), np.zeros(len(lam)), 0, [],
                             True, "distance", "residual")


def test_vgne_gap_examples():
    assert vgne_gap(_report([10, 12])) == 2
    assert vgne_gap(_report([10])) == 0


def test_tau_schedule_and_distance(benchmark):
    assert tau_schedule(0) == 1.0 and tau_schedule(3) == 0.125
    assert tau_schedule(50) == 1e-3
    prof = initial_profile(benchmark)
    assert profile_distance(benchmark, prof, prof) == 0


def test_equivalence_hypothesis(benchmark):
    assert equivalence_hypothesis_holds(benchmark)
    zones = tuple(Zone(z, 0, 0, 0) for z in range(4))
    p = Producer(0, 0, 10, 1, capacity_min=0, max_bids=1)
    inst = MarketInstance(zones, (p,), (p.marginal_ladder(),))
    assert not equivalence_hypothesis_holds(inst)
    rep = gauss_seidel_run(inst, max_sweeps=1, compute_gaps=False)
    assert "equivalence_hypothesis_fails" in rep.flags


# Gauss-Seidel ----------------------------------------------------------------

def test_gauss_seidel_fixed_point_converges_in_one_sweep():
    inst = monopolist()
    at_cap = (BidLadder(0, ((100, 100),)),)
    rep = gauss_seidel_run(inst, initial_profile(inst, at_cap), lower_level="market")
    assert rep.converged and rep.sweeps == 1
    assert rep.trace[0].distance == 0
    assert rep.potential_value == pytest.approx(5000)


def test_gauss_seidel_zero_sweeps_returns_start(benchmark):
    start = initial_profile(benchmark)
    rep = gauss_seidel_run(benchmark, start, max_sweeps=0, compute_gaps=False)
    assert not rep.converged and rep.sweeps == 0 and rep.trace == []
    assert rep.stop_reason == "max_sweeps"
    assert rep.profile is start


def test_gauss_seidel_duopoly_monotone():
    inst = duopoly(150)
    rep = gauss_seidel_run(inst)
    pots = [t.potential for t in rep.trace]
    assert all(b >= a - 1e-8 for a, b in zip(pots, pots[1:]))
    assert rep.converged
    assert np.all(rep.br_gap <= rep.br_gap_bound)


def test_gauss_seidel_random_order_is_seeded():
    inst = duopoly(150)
    a = gauss_seidel_run(inst, order="random", seed=3, compute_gaps=False)
    b = gauss_seidel_run(inst, order="random", seed=3, compute_gaps=False)
    assert [t.potential for t in a.trace] == [t.potential for t in b.trace]
    with pytest.raises(ValueError):
        gauss_seidel_run(inst, order=[0, 0])


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gauss_seidel_trace_monotone_on_random_markets(seed):
    rng = np.random.default_rng(seed)
    Z = int(rng.integers(1, 3))
    prods = tuple(Producer(n, int(rng.integers(Z)), float(rng.uniform(40, 100)),
                           float(rng.uniform(1, 10)), capacity_min=1.0, price_max=50,
                           max_bids=int(rng.integers(1, 3))) for n in range(3))
    supply = np.zeros(Z)
    for p in prods:
        supply[p.zone] += p.capacity_max
    zones = tuple(Zone(z, float(supply[z] * rng.uniform(0.2, 0.8)), 10.0, 0.0)
                  for z in range(Z))
    inst = MarketInstance(zones, prods, tuple(p.marginal_ladder() for p in prods))
    grid = GridConfig(coarse_points=8, refine_points=4, refine_passes=1, max_cycles=2)
    rep = gauss_seidel_run(inst, max_sweeps=15, grid=grid, compute_gaps=False)
    pots = [t.potential for t in rep.trace]
    assert all(b >= a - 1e-8 for a, b in zip(pots, pots[1:]))


# Potential program -----------------------------------------------------------

FAST = PenaltySchedule(rounds=3, max_iter=150)


def test_potential_monopolist_recovers_cap_bidding():
    inst = monopolist()
    rep = potential_solve(inst, starts=2, schedule=FAST)
    assert rep.potential_value == pytest.approx(5000, rel=1e-6)
    assert rep.residuals.max() <= 1e-6
    assert rep.vgne_gap == 0


def test_potential_start_at_equilibrium_is_kept():
    inst = monopolist()
    start = initial_profile(inst, (BidLadder(0, ((100, 100),)),))
    rep = potential_solve(inst, starts=1, schedule=FAST, start=start)
    assert rep.profile.ladders == start.ladders
    assert rep.potential_value == pytest.approx(5000)


def test_potential_is_seeded_and_parallel_safe():
    inst = duopoly(150)
    a = potential_solve(inst, starts=3, schedule=FAST, seed=4, compute_gaps=False)
    b = potential_solve(inst, starts=3, schedule=FAST, seed=4, jobs=2, compute_gaps=False)
    assert a.potential_value == b.potential_value
    assert a.extra["raw_potentials"] == b.extra["raw_potentials"]
    assert market_cost(a.profile.instance(inst), a.profile.fractions) == a.potential_value
    assert kkt_residual(a.profile.instance(inst), clear_market(a.profile.instance(inst))).ok()


def test_potential_rejects_zero_starts():
    with pytest.raises(ValueError):
        potential_solve(monopolist(), starts=0)


def test_report_to_dict_is_json_ready():
    import json
    rep = gauss_seidel_run(monopolist(), max_sweeps=2)
    d = rep.to_dict()
    json.dumps(d)
    assert d["method"] == "gauss_seidel" and len(d["trace"]) == rep.sweeps
