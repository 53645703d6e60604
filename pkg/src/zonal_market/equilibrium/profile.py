"""Strategy profiles, tracking terms and equilibrium diagnostics."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..lp_clearing import KktResidual, clear_market, zone_flows
from ..market_core import (BidLadder, ClearingResult, MarketInstance, Producer, Zone,
                           market_cost, revenues)


@dataclass(frozen=True)
class TrackingTerms:
    """Demand, export and core left to a focal producer by its opponents (MW, per zone)."""

    demand: np.ndarray
    export: np.ndarray
    core: np.ndarray


@dataclass(frozen=True)
class StrategyProfile:
    """Ladders, accepted fractions and per-producer multipliers.

    ``demand_duals[n]`` is producer ``n``'s own valuation of each zonal
    demand row. After a joint clearing every producer carries the same
    values; after decentralized best responses they may differ.
    """

    ladders: tuple[BidLadder, ...]
    fractions: np.ndarray  # (N, K, Z)
    demand_duals: np.ndarray  # (N, Z)
    capacity_duals: np.ndarray  # (N, K)
    export_duals: np.ndarray  # (N,)
    core_duals: np.ndarray  # (N,)

    @classmethod
    def from_clearing(cls, instance: MarketInstance, result: ClearingResult) -> StrategyProfile:
        N = instance.n_producers
        zone_of = instance.producer_zone
        return cls(
            ladders=instance.ladders,
            fractions=result.fractions.copy(),
            demand_duals=np.tile(result.demand_duals, (N, 1)),
            capacity_duals=result.capacity_duals.copy(),
            export_duals=result.export_duals[zone_of].copy(),
            core_duals=result.core_duals[zone_of].copy(),
        )

    def instance(self, base: MarketInstance) -> MarketInstance:
        return base.with_ladders(self.ladders)

    def replace_producer(self, n: int, ladder: BidLadder, fractions: np.ndarray,
                         demand_duals, capacity_duals, export_dual: float,
                         core_dual: float) -> StrategyProfile:
        """Copy with producer ``n``'s ladder, fractions ``(len, Z)`` and duals replaced."""
        ladders = list(self.ladders)
        ladders[n] = ladder
        K = max(len(l) for l in ladders)
        frac = _pad(self.fractions, K)
        frac[n] = 0.0
        frac[n, : len(ladder)] = fractions
        mu = _pad(self.capacity_duals, K)
        mu[n] = 0.0
        mu[n, : len(ladder)] = capacity_duals
        lam = self.demand_duals.copy()
        lam[n] = demand_duals
        sig = self.export_duals.copy()
        sig[n] = export_dual
        dlt = self.core_duals.copy()
        dlt[n] = core_dual
        return StrategyProfile(tuple(ladders), frac, lam, mu, sig, dlt)


def _pad(arr: np.ndarray, K: int) -> np.ndarray:
    out = np.zeros((arr.shape[0], K) + arr.shape[2:])
    k = min(K, arr.shape[1])
    out[:, :k] = arr[:, :k]
    return out


def split_marginal_ladder(producer: Producer, n_bids: int | None = None) -> BidLadder:
    """``n_bids`` equal bids covering full capacity at the marginal price."""
    n_bids = producer.max_bids if n_bids is None else n_bids
    if producer.capacity_min > 0:
        n_bids = max(1, min(n_bids, int(producer.capacity_max // producer.capacity_min)))
    cap = producer.capacity_max / n_bids
    return BidLadder(producer.id, tuple((cap, producer.price_min) for _ in range(n_bids)))


def initial_profile(instance: MarketInstance, ladders: Sequence[BidLadder] | None = None
                    ) -> StrategyProfile:
    """Clear the market at the given ladders (default: split marginal bids)."""
    if ladders is None:
        ladders = [split_marginal_ladder(p) for p in instance.producers]
    inst = instance.with_ladders(ladders)
    return StrategyProfile.from_clearing(inst, clear_market(inst))


def tracking_terms(instance: MarketInstance, profile: StrategyProfile, focal: int
                   ) -> TrackingTerms:
    """Residual demand, export room and core requirement left to ``focal``."""
    inst = profile.instance(instance)
    x = profile.fractions.copy()
    x[focal] = 0.0
    flows = zone_flows(inst, x)
    return TrackingTerms(
        demand=inst.demand - flows["served"],
        export=inst.export_limit - flows["export"],
        core=inst.core_portion - flows["core"],
    )


def residual_instance(instance: MarketInstance, terms: TrackingTerms, focal: int,
                      ladder: BidLadder) -> MarketInstance:
    """Single-producer market whose feasible set is the focal producer's share.

    Opponents' fractions are held fixed; their contribution is removed from
    the zonal requirements. Rows that involve only opponents are dropped by
    giving them zero right-hand sides.
    """
    producer = instance.producers[focal]
    home = producer.zone
    zones = []
    for z in instance.zones:
        demand = max(float(terms.demand[z.id]), 0.0)
        if z.id == home:
            core = max(float(terms.core[z.id]), 0.0)
            demand = max(demand, core)
            export = max(float(terms.export[z.id]), 0.0)
        else:
            core, export = 0.0, 0.0
        zones.append(Zone(z.id, demand, export, core, z.name))
    solo = dataclasses.replace(producer, id=0)
    return MarketInstance(tuple(zones), (solo,), (BidLadder(0, ladder.pairs),))


def potential_value(instance: MarketInstance, profile: StrategyProfile) -> float:
    """Sum of producer revenues, identical to the market cost of the profile."""
    return market_cost(profile.instance(instance), profile.fractions)


def penalized_objective(instance: MarketInstance, profile: StrategyProfile,
                        penalties) -> np.ndarray:
    """Revenue minus penalty-weighted demand and core shortfalls, per producer.

    Each producer is charged the total zonal demand shortfall and the core
    shortfall of its own zone. ``penalties`` is a scalar or one weight per
    producer.
    """
    inst = profile.instance(instance)
    N = inst.n_producers
    M = np.broadcast_to(np.asarray(penalties, dtype=float), (N,))
    if np.any(M < 0):
        raise ValueError("penalties must be >= 0")
    flows = zone_flows(inst, profile.fractions)
    demand_short = np.maximum(inst.demand - flows["served"], 0.0).sum()
    core_short = np.maximum(inst.core_portion - flows["core"], 0.0)
    rev = revenues(inst, profile.fractions)
    violation = demand_short + core_short[inst.producer_zone]
    return rev - M * violation


@dataclass(frozen=True)
class TraceEntry:
    potential: float
    distance: float
    tau: float


@dataclass
class EquilibriumReport:
    method: str
    profile: StrategyProfile
    potential_value: float
    br_gap: np.ndarray
    br_gap_bound: np.ndarray
    sweeps: int
    trace: list[TraceEntry]
    converged: bool
    stop_reason: str
    lower_level: str
    residuals: KktResidual | None = None
    flags: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict)

    @property
    def vgne_gap(self) -> float:
        return vgne_gap(self)

    def to_dict(self) -> dict:
        p = self.profile
        return {
            "method": self.method,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "lower_level": self.lower_level,
            "sweeps": self.sweeps,
            "potential_value": self.potential_value,
            "vgne_gap": self.vgne_gap,
            "br_gap": self.br_gap.tolist(),
            "br_gap_bound": self.br_gap_bound.tolist(),
            "trace": [dataclasses.asdict(t) for t in self.trace],
            "ladders": [[list(pair) for pair in l.pairs] for l in p.ladders],
            "fractions": p.fractions.tolist(),
            "demand_duals": p.demand_duals.tolist(),
            "residuals": dataclasses.asdict(self.residuals) if self.residuals else None,
            "flags": list(self.flags),
            **self.extra,
        }


def vgne_gap(report: EquilibriumReport) -> float:
    """Largest disagreement between producers' valuations of the same demand row."""
    lam = report.profile.demand_duals
    if lam.shape[0] < 2:
        return 0.0
    return float((lam.max(axis=0) - lam.min(axis=0)).max())


def equivalence_hypothesis_holds(instance: MarketInstance) -> bool:
    """Whether every producer may submit at least Z/3 bids."""
    return all(3 * p.max_bids >= instance.n_zones for p in instance.producers)
