"""Training and evaluation loops over a daily demand series."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..lp_clearing import clear_market
from ..market_core import ClearingResult, MarketInstance
from .agents import MarlConfig, PolicyBundle, make_bundle, policy_act, update_agents
from .env import PERTURBATION, REWARDS, make_state

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("episode", "agent", "zone", "mean_reward", "std_reward", "mean_cost")

# Offset separating the evaluation perturbation stream from training draws.
_EVAL_STREAM = 7919


@dataclass(frozen=True)
class TraceRow:
    episode: int
    agent: int
    zone: int
    mean_reward: float
    std_reward: float
    mean_cost: float


@dataclass
class TrainingTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def rewards(self) -> np.ndarray:
        """Episode-by-agent matrix of mean rewards."""
        if not self.rows:
            return np.zeros((0, 0))
        E = max(r.episode for r in self.rows) + 1
        N = max(r.agent for r in self.rows) + 1
        out = np.zeros((E, N))
        for r in self.rows:
            out[r.episode, r.agent] = r.mean_reward
        return out

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in self.rows:
                w.writerow([r.episode, r.agent, r.zone, f"{r.mean_reward:.10g}",
                            f"{r.std_reward:.10g}", f"{r.mean_cost:.10g}"])
        return path


def _demand_matrix(demand) -> np.ndarray:
    arr = np.asarray(getattr(demand, "values", demand), dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"demand must be (days, zones), got shape {arr.shape}")
    return arr


def _zone_costs(instance: MarketInstance, res: ClearingResult) -> np.ndarray:
    return np.bincount(instance.producer_zone, res.revenue, minlength=instance.n_zones)


def _step(bundle: PolicyBundle, template: MarketInstance, demand_t, state, explore: bool):
    actions = [policy_act(bundle, n, state, explore) for n in range(template.n_producers)]
    inst = template.with_demand(demand_t).with_ladders([a.ladder for a in actions])
    res = clear_market(inst)
    reward_fn = REWARDS[bundle.config.reward]
    kwargs = {"beta": bundle.config.beta} if bundle.config.reward == "shaped" else {}
    rewards = np.array([
        reward_fn(float(res.revenue[n]), a.ladder, float(res.demand_duals[p.zone]), p, **kwargs)
        for n, (a, p) in enumerate(zip(actions, template.producers))])
    joint = np.concatenate([a.raw for a in actions])
    return inst, res, joint, rewards


def train_run(template: MarketInstance, demand, config: MarlConfig = MarlConfig(),
              episodes: int = 200, seed: int = 0) -> tuple[PolicyBundle, TrainingTrace]:
    """Train zonal actor-critic agents by repeated passes over ``demand``.

    One episode is one pass over the series, one clearing per day. After
    each day every learner takes one critic and one actor step once the
    buffer holds a full batch. Exploration noise decays linearly from
    ``noise_start`` to ``noise_end`` over the episodes.
    """
    D = _demand_matrix(demand)
    T, Z = D.shape
    if T == 0:
        raise ValueError("demand series is empty")
    if Z != template.n_zones:
        raise ValueError(f"demand has {Z} zones, template has {template.n_zones}")
    bundle = make_bundle(template, config, seed, demand_scale=np.maximum(D.max(axis=0), 1.0))
    rng = bundle.rng
    trace = TrainingTrace()
    zone_of = template.producer_zone
    for ep in range(episodes):
        frac = ep / max(episodes - 1, 1)
        bundle.noise = config.noise_start + (config.noise_end - config.noise_start) * frac
        pert = rng.uniform(-PERTURBATION, PERTURBATION, (T + 1, Z))
        prev = np.zeros(Z)
        rewards = np.zeros((T, template.n_producers))
        costs = np.zeros((T, Z))
        state = make_state(prev, 0, T, D[0], bundle.demand_scale, pert[0], bundle.price_scale)
        for t in range(T):
            _, res, joint, r = _step(bundle, template, D[t], state, explore=True)
            prev = res.demand_duals
            nxt = (t + 1) % T
            next_state = make_state(prev, nxt, T, D[nxt], bundle.demand_scale, pert[t + 1],
                                    bundle.price_scale)
            bundle.buffer.add(state.vector(), joint, r, next_state.vector())
            if bundle.agents and len(bundle.buffer) >= config.batch_size:
                update_agents(bundle)
            rewards[t] = r
            costs[t] = _zone_costs(template, res)
            state = next_state
        for n in range(template.n_producers):
            z = int(zone_of[n])
            trace.rows.append(TraceRow(ep, n, z, float(rewards[:, n].mean()),
                                       float(rewards[:, n].std()), float(costs[:, z].mean())))
        log.info("episode %d: mean cost %.6g", ep, costs.sum(axis=1).mean())
    bundle.noise = config.noise_end
    return bundle, trace


@dataclass
class Evaluation:
    results: list[ClearingResult]
    costs: np.ndarray  # (T,)
    zone_costs: np.ndarray  # (T, Z) by supplier zone
    profits: np.ndarray  # (T, N)
    prices: np.ndarray  # (T, Z)
    ladders: list = field(default_factory=list)

    def summary(self) -> dict:
        if not self.results:
            return {"days": 0}
        return {
            "days": len(self.results),
            "mean_cost": float(self.costs.mean()),
            "mean_zone_cost": self.zone_costs.mean(axis=0).tolist(),
            "mean_profit": self.profits.mean(axis=0).tolist(),
            "mean_price": self.prices.mean(axis=0).tolist(),
        }


def evaluate_policy(bundle: PolicyBundle, template: MarketInstance, demand) -> Evaluation:
    """Greedy one-pass rollout; identical inputs give identical outputs."""
    D = _demand_matrix(demand)
    T, Z = D.shape if D.size else (0, template.n_zones)
    N = template.n_producers
    if T == 0:
        return Evaluation([], np.zeros(0), np.zeros((0, Z)), np.zeros((0, N)), np.zeros((0, Z)))
    if template.n_producers != bundle.instance.n_producers:
        raise ValueError("template and bundle disagree on the producer set")
    rng = np.random.default_rng([bundle.seed, _EVAL_STREAM])
    pert = rng.uniform(-PERTURBATION, PERTURBATION, (T, Z))
    prev = np.zeros(Z)
    results, ladders = [], []
    zone_costs = np.zeros((T, Z))
    prices = np.zeros((T, Z))
    for t in range(T):
        state = make_state(prev, t, T, D[t], bundle.demand_scale, pert[t], bundle.price_scale)
        inst, res, _, _ = _step(bundle, template, D[t], state, explore=False)
        results.append(res)
        ladders.append(inst.ladders)
        zone_costs[t] = _zone_costs(template, res)
        prices[t] = res.demand_duals
        prev = res.demand_duals
    profits = np.array([r.revenue for r in results])
    costs = np.array([r.total_cost for r in results])
    return Evaluation(results, costs, zone_costs, profits, prices, ladders)
