"""Clearing environment: observations, action decoding and rewards."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..market_core import BidLadder, MarketInstance, Producer, repair_capacities

PERTURBATION = 0.05


@dataclass(frozen=True)
class EnvState:
    prev_prices: np.ndarray  # (Z,) scaled to [-1, 1]
    day: float  # in [-1, 1]
    demand: np.ndarray  # (Z,) scaled to [-1, 1]
    perturbation: np.ndarray  # (Z,)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.prev_prices, [self.day], self.demand, self.perturbation])


def state_dim(n_zones: int) -> int:
    return 3 * n_zones + 1


def make_state(prev_prices, day: int, n_days: int, demand, demand_scale, perturbation,
               price_scale: float) -> EnvState:
    prev = np.clip(2.0 * np.asarray(prev_prices, dtype=float) / price_scale - 1.0, -1.0, 1.0)
    day_feat = 2.0 * day / (n_days - 1) - 1.0 if n_days > 1 else 0.0
    dem = np.clip(2.0 * np.asarray(demand, dtype=float) / demand_scale - 1.0, -1.0, 1.0)
    return EnvState(prev, float(day_feat), dem, np.asarray(perturbation, dtype=float))


def decode_action(raw, producer: Producer) -> BidLadder:
    """Map a raw action in ``[-1, 1]^{2K}`` to an admissible ladder.

    The first half sets capacities and the second half prices, each by an
    affine map onto the producer's bounds. Capacities are then repaired so
    their sum does not exceed ``Δ̄``.
    """
    raw = np.clip(np.asarray(raw, dtype=float), -1.0, 1.0)
    K = raw.size // 2
    if raw.size != 2 * K or K < 1:
        raise ValueError(f"raw action must have even positive length, got {raw.size}")
    u = 0.5 * (raw + 1.0)
    caps = producer.capacity_min + u[:K] * (producer.capacity_max - producer.capacity_min)
    prices = producer.price_min + u[K:] * (producer.price_max - producer.price_min)
    caps = repair_capacities(caps, producer)
    return BidLadder.from_arrays(producer.id, caps, prices)


def static_raw_action(producer: Producer, n_bids: int) -> np.ndarray:
    """Raw encoding of the marginal full-capacity offer of a static producer."""
    return np.concatenate([np.ones(n_bids), -np.ones(n_bids)])


def profit_reward(revenue: float, ladder: BidLadder, price: float, producer: Producer) -> float:
    return revenue / (producer.capacity_max * producer.price_max)


def shaped_reward(revenue: float, ladder: BidLadder, price: float, producer: Producer,
                  beta: float = 0.1) -> float:
    """Normalized profit minus a mild charge for bidding far above the clearing price."""
    over = max(0.0, (float(ladder.prices.mean()) - price) / producer.price_max)
    return profit_reward(revenue, ladder, price, producer) - beta * over


REWARDS = {"shaped": shaped_reward, "profit": profit_reward}


def zone_members(instance: MarketInstance) -> list[list[int]]:
    return [instance.producers_in(z) for z in range(instance.n_zones)]
