"""Domain types for zonal ancillary-service auctions.

A market round is described by a :class:`MarketInstance`: the zones with
their demand, export limit and core portion, the producers with their bid
bounds, and one :class:`BidLadder` per producer. Accepted fractions are
stored as a dense array ``x[n, k, z]`` padded to the longest ladder; padded
entries carry no capacity and are always zero.

Prices are in abstract "price units" per MW.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

DEFAULT_PRICE_CAP = 100.0
DEFAULT_CAPACITY_FLOOR = 5.0
DEFAULT_MAX_BIDS = 5

# Slack for float round-off when checking ladder bounds.
_BOUND_TOL = 1e-9


def _check_finite_nonneg(name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be finite and >= 0, got {value}")
    return value


@dataclass(frozen=True)
class Zone:
    id: int
    demand: float
    export_limit: float
    core_portion: float = 0.0
    name: str = ""

    def __post_init__(self):
        for attr in ("demand", "export_limit", "core_portion"):
            object.__setattr__(self, attr, _check_finite_nonneg(attr, getattr(self, attr)))
        if self.core_portion > self.demand:
            raise ValueError(
                f"zone {self.id}: core portion {self.core_portion} exceeds demand {self.demand}"
            )
        if not self.name:
            object.__setattr__(self, "name", f"zone{self.id}")


@dataclass(frozen=True)
class Producer:
    id: int
    zone: int
    capacity_max: float
    price_min: float
    capacity_min: float = DEFAULT_CAPACITY_FLOOR
    price_max: float = DEFAULT_PRICE_CAP
    max_bids: int = DEFAULT_MAX_BIDS

    def __post_init__(self):
        for attr in ("capacity_max", "price_min", "capacity_min", "price_max"):
            object.__setattr__(self, attr, _check_finite_nonneg(attr, getattr(self, attr)))
        if self.capacity_min > self.capacity_max:
            raise ValueError(f"producer {self.id}: capacity_min > capacity_max")
        if self.price_min > self.price_max:
            raise ValueError(f"producer {self.id}: price_min > price_max")
        if int(self.max_bids) < 1:
            raise ValueError(f"producer {self.id}: max_bids must be >= 1")
        object.__setattr__(self, "max_bids", int(self.max_bids))

    def marginal_ladder(self) -> BidLadder:
        """Single full-capacity bid at the marginal price."""
        return BidLadder(self.id, ((self.capacity_max, self.price_min),))


@dataclass(frozen=True)
class BidLadder:
    """A producer's sequence of ``(capacity MW, price)`` pairs."""

    producer_id: int
    pairs: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pairs = tuple((float(d), float(p)) for d, p in self.pairs)
        object.__setattr__(self, "pairs", pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def capacities(self) -> np.ndarray:
        return np.array([d for d, _ in self.pairs], dtype=float)

    @property
    def prices(self) -> np.ndarray:
        return np.array([p for _, p in self.pairs], dtype=float)

    @classmethod
    def from_arrays(cls, producer_id: int, capacities, prices) -> BidLadder:
        capacities = np.asarray(capacities, dtype=float).ravel()
        prices = np.asarray(prices, dtype=float).ravel()
        if capacities.shape != prices.shape:
            raise ValueError("capacities and prices must have the same length")
        return cls(producer_id, tuple(zip(capacities.tolist(), prices.tolist())))


class Violation(NamedTuple):
    rule: str  # "max_bids" | "price_bound" | "capacity_bound" | "total_capacity"
    bid: int | None
    detail: str


def validate_ladder(ladder: BidLadder, producer: Producer) -> list[Violation]:
    """Check a ladder against its producer's bid bounds.

    Returns an empty list when the ladder is admissible. Violations are
    reported as data; nothing is raised for an inadmissible ladder.
    """
    if ladder.producer_id != producer.id:
        raise ValueError(
            f"ladder belongs to producer {ladder.producer_id}, not {producer.id}"
        )
    out: list[Violation] = []
    if len(ladder) > producer.max_bids:
        out.append(Violation("max_bids", None, f"{len(ladder)} bids > K={producer.max_bids}"))
    cap_tol = _BOUND_TOL * max(1.0, producer.capacity_max)
    price_tol = _BOUND_TOL * max(1.0, producer.price_max)
    for k, (cap, price) in enumerate(ladder.pairs):
        if not (producer.price_min - price_tol <= price <= producer.price_max + price_tol):
            out.append(Violation(
                "price_bound", k,
                f"price {price} outside [{producer.price_min}, {producer.price_max}]"))
        if not (producer.capacity_min - cap_tol <= cap <= producer.capacity_max + cap_tol):
            out.append(Violation(
                "capacity_bound", k,
                f"capacity {cap} outside [{producer.capacity_min}, {producer.capacity_max}]"))
    total = float(ladder.capacities.sum()) if len(ladder) else 0.0
    if total > producer.capacity_max + cap_tol:
        out.append(Violation(
            "total_capacity", None, f"sum {total} > {producer.capacity_max}"))
    return out


def repair_capacities(capacities, producer: Producer) -> np.ndarray:
    """Clip capacities into the per-bid box, then shrink them to fit ``Δ̄``.

    Excess above the per-bid floor is rescaled proportionally so the total
    equals ``capacity_max``; bids already at the floor stay there.
    """
    caps = np.clip(np.asarray(capacities, dtype=float), producer.capacity_min,
                   producer.capacity_max)
    total = caps.sum()
    if total <= producer.capacity_max:
        return caps
    floor_total = producer.capacity_min * caps.size
    if floor_total > producer.capacity_max:
        raise ValueError(
            f"producer {producer.id}: {caps.size} bids cannot all meet the floor")
    excess = caps - producer.capacity_min
    scale = (producer.capacity_max - floor_total) / excess.sum()
    return producer.capacity_min + excess * scale


@dataclass(frozen=True)
class MarketInstance:
    zones: tuple[Zone, ...]
    producers: tuple[Producer, ...]
    ladders: tuple[BidLadder, ...]

    def __post_init__(self):
        object.__setattr__(self, "zones", tuple(self.zones))
        object.__setattr__(self, "producers", tuple(self.producers))
        object.__setattr__(self, "ladders", tuple(self.ladders))
        for i, z in enumerate(self.zones):
            if z.id != i:
                raise ValueError(f"zone ids must be 0..Z-1 in order; got {z.id} at {i}")
        for i, p in enumerate(self.producers):
            if p.id != i:
                raise ValueError(f"producer ids must be 0..N-1 in order; got {p.id} at {i}")
            if not 0 <= p.zone < len(self.zones):
                raise ValueError(f"producer {p.id} references unknown zone {p.zone}")
        if len(self.ladders) != len(self.producers):
            raise ValueError(
                f"{len(self.ladders)} ladders for {len(self.producers)} producers")
        for p, lad in zip(self.producers, self.ladders):
            if lad.producer_id != p.id:
                raise ValueError(f"ladder for producer {lad.producer_id} in slot {p.id}")

    @property
    def n_zones(self) -> int:
        return len(self.zones)

    @property
    def n_producers(self) -> int:
        return len(self.producers)

    @property
    def max_len(self) -> int:
        """Padded bid dimension of fraction arrays."""
        return max((len(l) for l in self.ladders), default=0)

    @property
    def demand(self) -> np.ndarray:
        return np.array([z.demand for z in self.zones])

    @property
    def export_limit(self) -> np.ndarray:
        return np.array([z.export_limit for z in self.zones])

    @property
    def core_portion(self) -> np.ndarray:
        return np.array([z.core_portion for z in self.zones])

    @property
    def producer_zone(self) -> np.ndarray:
        return np.array([p.zone for p in self.producers], dtype=int)

    def producers_in(self, zone: int) -> list[int]:
        return [p.id for p in self.producers if p.zone == zone]

    def capacity_matrix(self) -> np.ndarray:
        """Bid capacities padded to shape (N, K); padding is 0."""
        out = np.zeros((self.n_producers, self.max_len))
        for n, lad in enumerate(self.ladders):
            out[n, : len(lad)] = lad.capacities
        return out

    def price_matrix(self) -> np.ndarray:
        out = np.zeros((self.n_producers, self.max_len))
        for n, lad in enumerate(self.ladders):
            out[n, : len(lad)] = lad.prices
        return out

    def bid_mask(self) -> np.ndarray:
        out = np.zeros((self.n_producers, self.max_len), dtype=bool)
        for n, lad in enumerate(self.ladders):
            out[n, : len(lad)] = True
        return out

    def with_ladders(self, ladders: Sequence[BidLadder]) -> MarketInstance:
        return dataclasses.replace(self, ladders=tuple(ladders))

    def with_ladder(self, producer: int, ladder: BidLadder) -> MarketInstance:
        ladders = list(self.ladders)
        ladders[producer] = ladder
        return dataclasses.replace(self, ladders=tuple(ladders))

    def with_demand(self, demand) -> MarketInstance:
        demand = np.asarray(demand, dtype=float)
        if demand.shape != (self.n_zones,):
            raise ValueError(f"expected {self.n_zones} demands, got shape {demand.shape}")
        zones = tuple(dataclasses.replace(z, demand=float(d)) for z, d in zip(self.zones, demand))
        return dataclasses.replace(self, zones=zones)

    def with_export_limits(self, limits) -> MarketInstance:
        limits = np.asarray(limits, dtype=float)
        zones = tuple(
            dataclasses.replace(z, export_limit=float(e)) for z, e in zip(self.zones, limits))
        return dataclasses.replace(self, zones=zones)

    def marginal_ladders(self) -> tuple[BidLadder, ...]:
        return tuple(p.marginal_ladder() for p in self.producers)

    def validate(self) -> dict[int, list[Violation]]:
        """Violations per producer id; empty dict when every ladder is admissible."""
        out = {}
        for p, lad in zip(self.producers, self.ladders):
            v = validate_ladder(lad, p)
            if v:
                out[p.id] = v
        return out


@dataclass(frozen=True)
class ClearingResult:
    """Primal fractions and dual prices of one market clearing.

    ``bound_duals`` are the multipliers of ``x >= 0``; together with the
    other duals they close the stationarity condition of the clearing LP.
    ``shortfall`` is non-zero only for elastic (penalized) clearings.
    """

    fractions: np.ndarray  # (N, K, Z)
    demand_duals: np.ndarray  # lambda, (Z,)
    capacity_duals: np.ndarray  # mu, (N, K)
    export_duals: np.ndarray  # sigma, (Z,)
    core_duals: np.ndarray  # delta, (Z,)
    bound_duals: np.ndarray  # (N, K, Z)
    total_cost: float
    revenue: np.ndarray  # (N,)
    shortfall: np.ndarray = field(default=None)  # (2, Z): demand row, core row

    def __post_init__(self):
        if self.shortfall is None:
            object.__setattr__(self, "shortfall", np.zeros((2, self.fractions.shape[2])))

    @property
    def clearing_prices(self) -> np.ndarray:
        return self.demand_duals


def _zone_sums(fractions) -> np.ndarray:
    fractions = np.asarray(fractions, dtype=float)
    if fractions.ndim == 1:
        return fractions
    if fractions.ndim == 2:
        return fractions.sum(axis=1)
    raise ValueError(f"fractions for one producer must be 1-D or 2-D, got {fractions.ndim}-D")


def producer_revenue(ladder: BidLadder, fractions) -> float:
    """Revenue sum_k price_k * capacity_k * (sum_z x[k, z]).

    ``fractions`` is ``(len(ladder), Z)`` or already zone-summed ``(len(ladder),)``.
    """
    sums = _zone_sums(fractions)
    if sums.shape[0] != len(ladder):
        raise ValueError(f"ladder has {len(ladder)} bids, fractions have {sums.shape[0]} rows")
    if len(ladder) == 0:
        return 0.0
    return float(np.sum(ladder.prices * ladder.capacities * sums))


def market_cost(instance: MarketInstance, fractions) -> float:
    """Total payment of the market operator; equals the sum of producer revenues."""
    fractions = np.asarray(fractions, dtype=float)
    expected = (instance.n_producers, instance.max_len, instance.n_zones)
    if fractions.shape != expected:
        raise ValueError(f"fractions shape {fractions.shape} != {expected}")
    return float(sum(
        producer_revenue(lad, fractions[n, : len(lad)])
        for n, lad in enumerate(instance.ladders)))


def revenues(instance: MarketInstance, fractions) -> np.ndarray:
    fractions = np.asarray(fractions, dtype=float)
    return np.array([
        producer_revenue(lad, fractions[n, : len(lad)])
        for n, lad in enumerate(instance.ladders)])
