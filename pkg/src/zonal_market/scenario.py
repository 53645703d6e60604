"""Scenario construction: demand series, config files and the two-zone benchmark.

Demand CSV format (UTF-8, ISO dates, one row per zone and day)::

    date,zone,demand_mw
    2024-01-01,Germany,1932.5
    2024-01-01,Austria,200

Scenario files are TOML validated against :class:`ScenarioConfig`; unknown
keys are rejected.
"""

from __future__ import annotations

import csv
import datetime as dt
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import GapWarning, ParseError
from .market_core import (DEFAULT_CAPACITY_FLOOR, DEFAULT_MAX_BIDS, DEFAULT_PRICE_CAP,
                          MarketInstance, Producer, Zone)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
CSV_HEADER = ("date", "zone", "demand_mw")


# Demand series ---------------------------------------------------------------

@dataclass(frozen=True)
class DemandSeries:
    """Daily demand per zone. ``gaps[t]`` marks missing calendar days before day ``t``."""

    dates: tuple[dt.date, ...]
    zones: tuple[str, ...]
    values: np.ndarray  # (T, Z) MW
    gaps: np.ndarray = field(default=None)  # (T,) bool

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(len(self.dates), len(self.zones))
        object.__setattr__(self, "values", values)
        if self.gaps is None:
            object.__setattr__(self, "gaps", np.zeros(len(self.dates), dtype=bool))
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("dates must be strictly increasing")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("demand must be finite and non-negative")

    def __len__(self) -> int:
        return len(self.dates)

    def zone(self, name: str) -> np.ndarray:
        return self.values[:, self.zones.index(name)]

    def day(self, date: dt.date | str) -> int:
        if isinstance(date, str):
            date = dt.date.fromisoformat(date)
        try:
            return self.dates.index(date)
        except ValueError:
            raise KeyError(f"date {date} not in series") from None

    def summary(self) -> dict[str, dict[str, float]]:
        out = {}
        for z, name in enumerate(self.zones):
            col = self.values[:, z]
            out[name] = {
                "min": float(col.min()), "q25": float(np.quantile(col, 0.25)),
                "q75": float(np.quantile(col, 0.75)), "max": float(col.max())}
        return out


def load_demand_csv(path, zones: list[str] | None = None) -> DemandSeries:
    """Parse a ``date,zone,demand_mw`` file.

    Zones appear in first-seen order unless ``zones`` fixes the order.
    Missing calendar days trigger a :class:`GapWarning` and are flagged in
    ``gaps``; every other defect raises :class:`ParseError` with the line.
    """
    path = Path(path)
    rows: dict[dt.date, dict[str, float]] = {}
    seen: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ParseError(f"expected header {','.join(CSV_HEADER)}", 1)
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != 3:
                raise ParseError(f"expected 3 fields, got {len(rec)}", line)
            date_s, zone, value_s = (c.strip() for c in rec)
            try:
                date = dt.date.fromisoformat(date_s)
            except ValueError:
                raise ParseError(f"bad date {date_s!r}", line) from None
            try:
                value = float(value_s)
            except ValueError:
                raise ParseError(f"bad demand {value_s!r}", line) from None
            if not np.isfinite(value) or value < 0:
                raise ParseError(f"demand must be finite and >= 0, got {value_s}", line)
            if not zone:
                raise ParseError("empty zone", line)
            day = rows.setdefault(date, {})
            if zone in day:
                raise ParseError(f"duplicate entry for {date} {zone}", line)
            day[zone] = value
            if zone not in seen:
                seen.append(zone)
    if not rows:
        raise ParseError("no data rows", None)
    order = list(zones) if zones is not None else seen
    if set(order) != set(seen):
        raise ParseError(f"zones {sorted(seen)} do not match expected {sorted(order)}", None)
    dates = sorted(rows)
    for d in dates:
        missing = [z for z in order if z not in rows[d]]
        if missing:
            raise ParseError(f"{d} lacks zones {missing}", None)
    values = np.array([[rows[d][z] for z in order] for d in dates])
    gaps = np.zeros(len(dates), dtype=bool)
    for t in range(1, len(dates)):
        if (dates[t] - dates[t - 1]).days > 1:
            gaps[t] = True
    if gaps.any():
        warnings.warn(f"{int(gaps.sum())} calendar gap(s) in {path}", GapWarning, stacklevel=2)
    return DemandSeries(tuple(dates), tuple(order), values, gaps)


def write_demand_csv(series: DemandSeries, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for d, row in zip(series.dates, series.values):
            for name, v in zip(series.zones, row):
                w.writerow([d.isoformat(), name, repr(float(v))])
    return path


# Synthetic demand ------------------------------------------------------------

class DemandModel(BaseModel):
    """Quantile targets for a synthetic zone series.

    ``seasonal`` draws a smooth seasonal signal plus noise and remaps its
    ranks onto the piecewise-linear quantile curve through the four
    targets. ``spiky`` holds the 25th percentile level and jumps to the
    maximum on rare days.
    """

    model_config = ConfigDict(extra="forbid")
    kind: Literal["seasonal", "spiky"] = "seasonal"
    minimum: float = Field(ge=0)
    q25: float = Field(ge=0)
    q75: float = Field(ge=0)
    maximum: float = Field(ge=0)
    spike_rate: float = Field(default=0.05, gt=0, lt=0.25)

    @model_validator(mode="after")
    def _ordered(self):
        if not self.minimum <= self.q25 <= self.q75 <= self.maximum:
            raise ValueError("quantile targets must be non-decreasing")
        if self.kind == "spiky" and not (self.minimum == self.q25 == self.q75):
            raise ValueError("spiky model needs minimum == q25 == q75")
        return self


GERMANY_DEMAND = DemandModel(kind="seasonal", minimum=1745, q25=1898, q75=1988, maximum=2103)
AUSTRIA_DEMAND = DemandModel(kind="spiky", minimum=200, q25=200, q75=200, maximum=225)


def _synth_zone(spec: DemandModel, days: int, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "spiky":
        out = np.full(days, spec.q25)
        spikes = rng.random(days) < spec.spike_rate
        if not spikes.any():
            spikes[rng.integers(days)] = True
        # Keep spikes below a quarter of days so the upper quartile stays at base.
        spikes[np.flatnonzero(spikes)[max(1, days // 5):]] = False
        out[spikes] = spec.maximum
        return out
    t = np.arange(days)
    signal = (np.sin(2 * np.pi * t / 7.0) + 0.5 * np.sin(2 * np.pi * t / max(days, 30))
              + 0.8 * rng.standard_normal(days))
    ranks = np.empty(days)
    ranks[np.argsort(signal, kind="stable")] = np.arange(days)
    p = ranks / (days - 1)
    return np.interp(p, [0.0, 0.25, 0.75, 1.0],
                     [spec.minimum, spec.q25, spec.q75, spec.maximum])


def synth_demand(specs: dict[str, DemandModel], days: int, seed: int = 0,
                 start: dt.date = dt.date(2024, 1, 1)) -> DemandSeries:
    """Seeded daily series whose empirical quantiles follow each zone's targets."""
    if days < 30:
        raise ValueError("synthetic series need at least 30 days")
    rng = np.random.default_rng(seed)
    names = tuple(specs)
    values = np.column_stack([_synth_zone(specs[n], days, rng) for n in names])
    dates = tuple(start + dt.timedelta(days=i) for i in range(days))
    return DemandSeries(dates, names, values)


# Scenario config -------------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ZoneConfig(_Strict):
    name: str
    export_limit: float = Field(ge=0)
    core_portion: float = Field(default=0.0, ge=0)
    reference_demand: float = Field(ge=0)
    demand: DemandModel | None = None


class ProducerConfig(_Strict):
    zone: int = Field(ge=0)
    capacity_max: float = Field(ge=0)
    price_min: float = Field(ge=0)
    capacity_min: float | None = Field(default=None, ge=0)
    price_max: float | None = Field(default=None, ge=0)
    max_bids: int | None = Field(default=None, ge=1)


class MarketDefaults(_Strict):
    max_bids: int = Field(default=DEFAULT_MAX_BIDS, ge=1)
    capacity_floor: float = Field(default=DEFAULT_CAPACITY_FLOOR, ge=0)
    price_cap: float = Field(default=DEFAULT_PRICE_CAP, ge=0)


class DemandSource(_Strict):
    csv: str | None = None
    days: int = Field(default=60, ge=30)
    seed: int = 0
    start: dt.date = dt.date(2024, 1, 1)


class CouplingConfig(_Strict):
    """Export factors: ``E_0 = c[0]·max D_1`` and ``E_1 = c[1]·max D_0``."""

    factors: tuple[float, float] | None = None


class EquilibriumConfig(_Strict):
    eps: float = Field(default=1e-4, gt=0)
    max_sweeps: int = Field(default=100, ge=0)
    tau0: float = Field(default=1.0, ge=0)
    tau_min: float = Field(default=1e-3, ge=0)
    lower_level: Literal["residual", "market"] = "residual"
    starts: int = Field(default=4, ge=1)
    penalty_start: float = Field(default=10.0, gt=0)
    penalty_stop: float = Field(default=1e5, gt=0)
    penalty_rounds: int = Field(default=5, ge=1)


class MarlSettings(_Strict):
    episodes: int = Field(default=200, ge=0)
    hidden: tuple[int, ...] = (64, 64)
    actor_lr: float = Field(default=1e-4, gt=0)
    critic_lr: float = Field(default=1e-3, gt=0)
    gamma: float = Field(default=0.95, ge=0, le=1)
    tau: float = Field(default=0.01, ge=0, le=1)
    batch_size: int = Field(default=128, ge=1)
    buffer_capacity: int = Field(default=100_000, ge=1)
    noise_start: float = Field(default=0.3, ge=0)
    noise_end: float = Field(default=0.05, ge=0)
    reward: Literal["shaped", "profit"] = "shaped"
    beta: float = Field(default=0.1, ge=0)
    learning_agents: tuple[int, ...] | None = None
    actor_init: Literal["random", "truthful"] = "truthful"

    def marl_config(self):
        from .marl import MarlConfig
        return MarlConfig(**self.model_dump(exclude={"episodes"}))


class ScenarioConfig(_Strict):
    version: int = SCHEMA_VERSION
    name: str = "scenario"
    seed: int = 0
    market: MarketDefaults = MarketDefaults()
    zones: list[ZoneConfig]
    producers: list[ProducerConfig]
    demand: DemandSource = DemandSource()
    coupling: CouplingConfig = CouplingConfig()
    equilibrium: EquilibriumConfig = EquilibriumConfig()
    marl: MarlSettings = MarlSettings()

    @model_validator(mode="after")
    def _check(self):
        if self.version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {self.version}")
        for i, p in enumerate(self.producers):
            if p.zone >= len(self.zones):
                raise ValueError(f"producer {i} references unknown zone {p.zone}")
        for z in self.zones:
            if z.core_portion > z.reference_demand:
                raise ValueError(f"zone {z.name}: core portion exceeds reference demand")
        return self


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ParseError(str(exc)) from None
    cfg = ScenarioConfig.model_validate(data)
    if cfg.demand.csv is not None and not Path(cfg.demand.csv).is_absolute():
        cfg = cfg.model_copy(update={"demand": cfg.demand.model_copy(
            update={"csv": str(path.parent / cfg.demand.csv)})})
    return cfg


# Benchmark -------------------------------------------------------------------

# Germany is zone 0, Austria zone 1.
BENCHMARK_PRODUCERS = (
    (0, 700, 7), (0, 700, 7), (1, 150, 3), (1, 150, 3),
    (0, 650, 6), (0, 600, 5), (0, 850, 8), (1, 350, 4),
)


def benchmark_config() -> ScenarioConfig:
    return ScenarioConfig(
        name="germany-austria",
        zones=[
            ZoneConfig(name="Germany", export_limit=80, core_portion=0,
                       reference_demand=GERMANY_DEMAND.maximum, demand=GERMANY_DEMAND),
            ZoneConfig(name="Austria", export_limit=80, core_portion=100,
                       reference_demand=AUSTRIA_DEMAND.maximum, demand=AUSTRIA_DEMAND),
        ],
        producers=[ProducerConfig(zone=z, capacity_max=c, price_min=p)
                   for z, c, p in BENCHMARK_PRODUCERS],
    )


def build_instance(config: ScenarioConfig, demand=None) -> MarketInstance:
    """Market template with marginal ladders; ``demand`` overrides reference demand."""
    m = config.market
    zones = []
    for i, z in enumerate(config.zones):
        d = z.reference_demand if demand is None else float(demand[i])
        zones.append(Zone(i, d, z.export_limit, min(z.core_portion, d), z.name))
    producers = tuple(
        Producer(i, p.zone, p.capacity_max, p.price_min,
                 capacity_min=m.capacity_floor if p.capacity_min is None else p.capacity_min,
                 price_max=m.price_cap if p.price_max is None else p.price_max,
                 max_bids=m.max_bids if p.max_bids is None else p.max_bids)
        for i, p in enumerate(config.producers))
    return MarketInstance(tuple(zones), producers, tuple(p.marginal_ladder() for p in producers))


def build_benchmark(config: ScenarioConfig | None = None) -> MarketInstance:
    return build_instance(benchmark_config() if config is None else config)


def scenario_demand(config: ScenarioConfig) -> DemandSeries:
    """The scenario's demand: its CSV if given, else the synthetic models."""
    src = config.demand
    if src.csv is not None:
        series = load_demand_csv(src.csv)
        names = [z.name for z in config.zones]
        if list(series.zones) != names:
            if set(series.zones) != set(names):
                raise ParseError(f"CSV zones {series.zones} do not match scenario zones {names}")
            idx = [series.zones.index(n) for n in names]
            series = DemandSeries(series.dates, tuple(names), series.values[:, idx], series.gaps)
        return series
    specs = {}
    for z in config.zones:
        if z.demand is None:
            raise ValueError(f"zone {z.name} has neither CSV data nor a demand model")
        specs[z.name] = z.demand
    return synth_demand(specs, src.days, src.seed, src.start)


def scenario_template(config: ScenarioConfig, series: DemandSeries) -> MarketInstance:
    """Template for a scenario, with export limits from its coupling factors if set."""
    inst = build_instance(config)
    if config.coupling.factors is not None:
        inst = coupled_instance(inst, series, config.coupling.factors)
    return inst


def coupled_instance(instance: MarketInstance, demand: DemandSeries | np.ndarray,
                     factors: tuple[float, float]) -> MarketInstance:
    """Two-zone template with ``E_0 = c_0·max D_1`` and ``E_1 = c_1·max D_0``."""
    if instance.n_zones != 2:
        raise ValueError("coupling factors are defined for two zones")
    values = np.asarray(getattr(demand, "values", demand), dtype=float)
    if min(factors) < 0:
        raise ValueError("coupling factors must be >= 0")
    peak = values.max(axis=0)
    return instance.with_export_limits([factors[0] * peak[1], factors[1] * peak[0]])


def coupling_grid(c0_range: tuple[float, float], c1_range: tuple[float, float], steps,
                  demand: DemandSeries | np.ndarray, instance: MarketInstance | None = None,
                  mode: Literal["zip", "product"] = "zip"
                  ) -> list[tuple[float, float, MarketInstance]]:
    """Templates over a grid of export factors.

    ``mode="zip"`` pairs the i-th value of each range (one axis of points);
    ``"product"`` takes every combination. ``steps`` is a count or a pair
    of counts.
    """
    if min(*c0_range, *c1_range) < 0:
        raise ValueError("ranges must be non-negative")
    n0, n1 = (steps, steps) if np.isscalar(steps) else steps
    g0 = np.linspace(c0_range[0], c0_range[1], int(n0))
    g1 = np.linspace(c1_range[0], c1_range[1], int(n1))
    base = build_benchmark() if instance is None else instance
    if mode == "zip":
        if g0.size != g1.size:
            raise ValueError("zip mode needs equal step counts")
        pairs = list(zip(g0, g1))
    elif mode == "product":
        pairs = [(a, b) for a in g0 for b in g1]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return [(float(a), float(b), coupled_instance(base, demand, (float(a), float(b))))
            for a, b in pairs]
