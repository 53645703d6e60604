import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from pydantic import ValidationError

from zonal_market.errors import GapWarning, ParseError
from zonal_market.lp_clearing import check_slater
from zonal_market.market_core import validate_ladder
from zonal_market.scenario import (AUSTRIA_DEMAND, GERMANY_DEMAND, DemandSeries, ScenarioConfig,
                                   benchmark_config, build_benchmark, build_instance,
                                   coupled_instance, coupling_grid, load_demand_csv,
                                   load_scenario, scenario_demand, scenario_template,
                                   synth_demand, write_demand_csv)

ROOT = __import__("pathlib").Path(__file__).resolve().parents[1]


def _write(tmp_path, text):
    p = tmp_path / "d.csv"
    p.write_text(text)
    return p


def test_csv_three_days_two_zones(tmp_path):
    p = _write(tmp_path, "date,zone,demand_mw\n"
                         "2024-01-01,Germany,1900\n2024-01-01,Austria,200\n"
                         "2024-01-02,Germany,2103\n2024-01-02,Austria,225\n"
                         "2024-01-03,Germany,1800\n2024-01-03,Austria,200\n")
    s = load_demand_csv(p)
    assert len(s) == 3 and s.zones == ("Germany", "Austria")
    assert s.zone("Germany").tolist() == [1900, 2103, 1800]
    assert s.summary()["Germany"]["max"] == 2103
    assert s.day("2024-01-02") == 1


def test_csv_negative_demand_reports_line(tmp_path):
    p = _write(tmp_path, "date,zone,demand_mw\n2024-01-01,Germany,1900\n2024-01-02,Germany,-5\n")
    with pytest.raises(ParseError) as exc:
        load_demand_csv(p)
    assert exc.value.line == 3


@pytest.mark.parametrize("body, line", [
    ("date,zone,mw\n", 1),
    ("date,zone,demand_mw\n2024-13-01,Germany,1\n", 2),
    ("date,zone,demand_mw\n2024-01-01,Germany,abc\n", 2),
    ("date,zone,demand_mw\n2024-01-01,Germany\n", 2),
    ("date,zone,demand_mw\n2024-01-01,Germany,1\n2024-01-01,Germany,2\n", 3),
])
def test_csv_malformed(tmp_path, body, line):
    with pytest.raises(ParseError) as exc:
        load_demand_csv(_write(tmp_path, body))
    assert exc.value.line == line


def test_csv_gap_is_flagged(tmp_path):
    p = _write(tmp_path, "date,zone,demand_mw\n2024-01-01,A,1\n2024-01-04,A,2\n")
    with pytest.warns(GapWarning):
        s = load_demand_csv(p)
    assert s.gaps.tolist() == [False, True]


def test_csv_missing_zone_on_a_day(tmp_path):
    p = _write(tmp_path, "date,zone,demand_mw\n2024-01-01,A,1\n2024-01-01,B,1\n2024-01-02,A,2\n")
    with pytest.raises(ParseError):
        load_demand_csv(p)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_csv_round_trip(days, zones, seed):
    import tempfile
    from pathlib import Path
    rng = np.random.default_rng(seed)
    dates = tuple(dt.date(2024, 2, 27) + dt.timedelta(days=i) for i in range(days))
    s = DemandSeries(dates, tuple(f"z{i}" for i in range(zones)),
                     rng.uniform(0, 3000, (days, zones)))
    with tempfile.TemporaryDirectory() as d:
        back = load_demand_csv(write_demand_csv(s, Path(d) / "x.csv"))
    assert back.dates == s.dates and back.zones == s.zones
    np.testing.assert_array_equal(back.values, s.values)


def test_synth_quantiles_match_targets():
    s = synth_demand({"Germany": GERMANY_DEMAND, "Austria": AUSTRIA_DEMAND}, 60, seed=0)
    g = s.summary()["Germany"]
    for key, target in (("min", 1745), ("q25", 1898), ("q75", 1988), ("max", 2103)):
        assert g[key] == pytest.approx(target, rel=0.02)
    a = s.summary()["Austria"]
    assert a["q25"] == 200 and a["q75"] == 200 and a["max"] == 225 and a["min"] == 200


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("days", [30, 61, 365])
def test_synth_quantiles_across_seeds(seed, days):
    s = synth_demand({"G": GERMANY_DEMAND, "A": AUSTRIA_DEMAND}, days, seed=seed)
    g, a = s.summary()["G"], s.summary()["A"]
    assert g["q25"] == pytest.approx(1898, rel=0.02) and g["q75"] == pytest.approx(1988, rel=0.02)
    assert a["q25"] == a["q75"] == 200


def test_synth_is_seeded():
    a = synth_demand({"G": GERMANY_DEMAND}, 40, seed=1)
    b = synth_demand({"G": GERMANY_DEMAND}, 40, seed=1)
    np.testing.assert_array_equal(a.values, b.values)
    with pytest.raises(ValueError):
        synth_demand({"G": GERMANY_DEMAND}, 10)


def test_benchmark_matches_tables(benchmark):
    p6 = benchmark.producers[6]
    assert (p6.zone, p6.capacity_max, p6.price_min) == (0, 850, 8)
    assert benchmark.zones[1].core_portion == 100 and benchmark.zones[0].core_portion == 0
    assert benchmark.export_limit.tolist() == [80, 80]
    assert all(p.max_bids == 5 and p.capacity_min == 5 and p.price_max == 100
               for p in benchmark.producers)
    assert check_slater(benchmark).overall
    for p, l in zip(benchmark.producers, benchmark.ladders):
        assert validate_ladder(l, p) == []


def test_scenario_file_matches_builtin():
    cfg = load_scenario(ROOT / "scenarios" / "benchmark.toml")
    assert cfg.model_dump() == benchmark_config().model_dump()
    assert build_benchmark(cfg) == build_benchmark()


def test_scenario_rejects_unknown_keys(tmp_path):
    text = (ROOT / "scenarios" / "benchmark.toml").read_text() + "\n[extra]\nfoo = 1\n"
    p = tmp_path / "bad.toml"
    p.write_text(text)
    with pytest.raises(ValidationError):
        load_scenario(p)
    p.write_text("version = [")
    with pytest.raises(ParseError):
        load_scenario(p)


def test_scenario_validation_errors():
    base = benchmark_config().model_dump()
    base["producers"][0]["zone"] = 5
    with pytest.raises(ValidationError):
        ScenarioConfig.model_validate(base)
    base = benchmark_config().model_dump()
    base["version"] = 2
    with pytest.raises(ValidationError):
        ScenarioConfig.model_validate(base)


def test_quick_scenario_reads_csv():
    cfg = load_scenario(ROOT / "scenarios" / "quick.toml")
    s = scenario_demand(cfg)
    assert len(s) == 30 and s.zones == ("Germany", "Austria")
    inst = build_instance(cfg, s.values[0])
    assert inst.demand.tolist() == s.values[0].tolist()


def test_coupling_examples():
    s = synth_demand({"G": GERMANY_DEMAND, "A": AUSTRIA_DEMAND}, 60, seed=0)
    grid = coupling_grid((0, 2), (0, 0.2), 11, s)
    assert len(grid) == 11
    c0, c1, inst = grid[-1]
    assert (c0, c1) == (2, 0.2)
    assert inst.export_limit[0] == pytest.approx(450)
    assert grid[0][2].export_limit.tolist() == [0, 0]
    train = coupled_instance(build_benchmark(), s, (0.4, 0.04))
    assert train.export_limit.tolist() == pytest.approx([90, 0.04 * s.values[:, 0].max()])
    assert len(coupling_grid((0, 2), (0, 0.2), (3, 2), s, mode="product")) == 6
    with pytest.raises(ValueError):
        coupling_grid((-1, 2), (0, 0.2), 3, s)


def test_coupling_unit_grid_reproduces_template():
    s = synth_demand({"G": GERMANY_DEMAND, "A": AUSTRIA_DEMAND}, 60, seed=0)
    peak = s.values.max(axis=0)
    c0, c1 = 80 / peak[1], 80 / peak[0]
    (_, _, inst), = coupling_grid((c0, c0), (c1, c1), 1, s)
    np.testing.assert_allclose(inst.export_limit, build_benchmark().export_limit)


def test_scenario_template_applies_coupling():
    data = benchmark_config().model_dump()
    data["coupling"] = {"factors": (0.4, 0.04)}
    cfg = ScenarioConfig.model_validate(data)
    s = scenario_demand(cfg)
    assert scenario_template(cfg, s).export_limit[0] == pytest.approx(0.4 * 225)
