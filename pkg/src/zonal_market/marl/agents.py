"""Zonal actor-critic agents: policies, losses, updates and checkpoints.

Each learning producer owns an actor ``μ_n(s)`` and a critic
``Q_n(s, a(z))`` whose action input is the joint raw action of every
producer in its zone (learning or static). Critics never see actions from
other zones.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..market_core import BidLadder, MarketInstance
from .buffer import ReplayBuffer
from .env import EnvState, decode_action, state_dim, static_raw_action, zone_members
from .networks import MLP, Adam, soft_update_params

CHECKPOINT_VERSION = 1


ACTOR_INITS = ("random", "truthful")
# Raw magnitude of the "truthful" starting offer: caps near the top of the box,
# prices near the floor, while tanh keeps a usable slope.
_TRUTHFUL_RAW = 0.98


@dataclass(frozen=True)
class MarlConfig:
    hidden: tuple[int, ...] = (64, 64)
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    gamma: float = 0.95
    tau: float = 0.01
    batch_size: int = 128
    buffer_capacity: int = 100_000
    noise_start: float = 0.3
    noise_end: float = 0.05
    reward: str = "shaped"
    beta: float = 0.1
    learning_agents: tuple[int, ...] | None = None  # None: every producer learns
    actor_init: str = "random"  # "truthful": start near full-capacity marginal offers

    def __post_init__(self):
        if self.actor_init not in ACTOR_INITS:
            raise ValueError(f"unknown actor_init {self.actor_init!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        d["learning_agents"] = None if self.learning_agents is None else list(self.learning_agents)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> MarlConfig:
        d = dict(d)
        d.setdefault("actor_init", "random")
        d["hidden"] = tuple(d["hidden"])
        if d.get("learning_agents") is not None:
            d["learning_agents"] = tuple(d["learning_agents"])
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class AgentNets:
    actor: MLP
    critic: MLP
    actor_target: MLP
    critic_target: MLP
    actor_opt: Adam
    critic_opt: Adam


@dataclass
class PolicyBundle:
    """Everything needed to act, learn and resume for one market template."""

    instance: MarketInstance
    config: MarlConfig
    agents: dict[int, AgentNets]  # learning producers only
    buffer: ReplayBuffer
    rng: np.random.Generator
    seed: int
    noise: float
    demand_scale: np.ndarray  # (Z,) MW mapped to +1 in observations
    n_bids: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not self.n_bids:
            self.n_bids = tuple(p.max_bids for p in self.instance.producers)
        self.offsets = np.concatenate([[0], np.cumsum([2 * k for k in self.n_bids])]).astype(int)
        self.members = zone_members(self.instance)
        self.static_raw = np.concatenate([
            static_raw_action(p, k) for p, k in zip(self.instance.producers, self.n_bids)])

    @property
    def learning(self) -> list[int]:
        return sorted(self.agents)

    @property
    def price_scale(self) -> float:
        return max(p.price_max for p in self.instance.producers)

    @property
    def action_dim(self) -> int:
        return int(self.offsets[-1])

    def action_slice(self, n: int) -> slice:
        return slice(int(self.offsets[n]), int(self.offsets[n + 1]))

    def zonal_columns(self, n: int) -> np.ndarray:
        """Columns of the joint action seen by producer ``n``'s critic."""
        zone = self.instance.producers[n].zone
        return np.concatenate([np.arange(self.offsets[m], self.offsets[m + 1])
                               for m in self.members[zone]])

    def own_columns_in_zonal(self, n: int) -> np.ndarray:
        """Positions of ``n``'s own action inside its zonal action vector."""
        zone = self.instance.producers[n].zone
        pos = 0
        for m in self.members[zone]:
            width = 2 * self.n_bids[m]
            if m == n:
                return np.arange(pos, pos + width)
            pos += width
        raise ValueError(f"producer {n} is not in its own zone list")

    def critic_input_dim(self, n: int) -> int:
        return state_dim(self.instance.n_zones) + self.zonal_columns(n).size


def make_bundle(instance: MarketInstance, config: MarlConfig = MarlConfig(), seed: int = 0,
                demand_scale=None) -> PolicyBundle:
    rng = np.random.default_rng(seed)
    learners = (range(instance.n_producers) if config.learning_agents is None
                else config.learning_agents)
    sd = state_dim(instance.n_zones)
    n_bids = tuple(p.max_bids for p in instance.producers)
    if demand_scale is None:
        demand_scale = np.maximum(instance.demand, 1.0)
    shell = PolicyBundle(instance, config, {}, ReplayBuffer(1, 1, 1, 1), rng, seed,
                         config.noise_start, np.asarray(demand_scale, dtype=float), n_bids)
    agents = {}
    for n in sorted(set(int(n) for n in learners)):
        if not 0 <= n < instance.n_producers:
            raise ValueError(f"unknown learning agent {n}")
        actor = MLP([sd, *config.hidden, 2 * n_bids[n]], head="tanh", rng=rng)
        if config.actor_init == "truthful":
            K, last = n_bids[n], len(config.hidden)
            actor.params[f"b{last}"][:K] = np.arctanh(_TRUTHFUL_RAW)
            actor.params[f"b{last}"][K:] = -np.arctanh(_TRUTHFUL_RAW)
        critic = MLP([shell.critic_input_dim(n), *config.hidden, 1], head="linear", rng=rng)
        agents[n] = AgentNets(actor, critic, actor.copy(), critic.copy(),
                              Adam(config.actor_lr), Adam(config.critic_lr))
    shell.agents = agents
    shell.buffer = ReplayBuffer(config.buffer_capacity, sd, shell.action_dim,
                                instance.n_producers)
    return shell


@dataclass(frozen=True)
class AgentAction:
    raw: np.ndarray
    ladder: BidLadder


def policy_act(bundle: PolicyBundle, agent: int, state: EnvState | np.ndarray,
               explore: bool = False) -> AgentAction:
    """Actor output (plus clipped Gaussian noise when exploring), decoded to a ladder.

    Static producers always return their marginal full-capacity offer.
    """
    producer = bundle.instance.producers[agent]
    if agent not in bundle.agents:
        return AgentAction(bundle.static_raw[bundle.action_slice(agent)].copy(),
                           producer.marginal_ladder())
    s = state.vector() if isinstance(state, EnvState) else np.asarray(state, dtype=float)
    raw = bundle.agents[agent].actor(s[None, :])[0]
    if explore and bundle.noise > 0:
        raw = np.clip(raw + bundle.noise * bundle.rng.standard_normal(raw.shape), -1.0, 1.0)
    return AgentAction(raw, decode_action(raw, producer))


@dataclass(frozen=True)
class Batch:
    states: np.ndarray  # (B, S)
    actions: np.ndarray  # (B, A) joint raw actions
    rewards: np.ndarray  # (B, N)
    next_states: np.ndarray  # (B, S)


def target_joint_actions(bundle: PolicyBundle, states: np.ndarray) -> np.ndarray:
    """Joint raw actions of the target actors (static offers for static producers)."""
    out = np.tile(bundle.static_raw, (states.shape[0], 1))
    for n, nets in bundle.agents.items():
        out[:, bundle.action_slice(n)] = nets.actor_target(states)
    return out


def _critic_targets(bundle: PolicyBundle, agent: int, batch: Batch, gamma: float,
                    next_joint: np.ndarray | None) -> np.ndarray:
    nets = bundle.agents[agent]
    if next_joint is None:
        next_joint = target_joint_actions(bundle, batch.next_states)
    cols = bundle.zonal_columns(agent)
    q_next = nets.critic_target(np.hstack([batch.next_states, next_joint[:, cols]]))[:, 0]
    return batch.rewards[:, agent] + gamma * q_next


def critic_loss_and_grad(bundle: PolicyBundle, agent: int, batch: Batch, gamma: float,
                         next_joint: np.ndarray | None = None):
    """Bellman mean-squared error and its gradient w.r.t. the online critic."""
    nets = bundle.agents[agent]
    y = _critic_targets(bundle, agent, batch, gamma, next_joint)
    cols = bundle.zonal_columns(agent)
    q, acts = nets.critic.forward(np.hstack([batch.states, batch.actions[:, cols]]))
    diff = q[:, 0] - y
    loss = float(np.mean(diff * diff))
    grads, _ = nets.critic.backward(acts, (2.0 * diff / diff.size)[:, None])
    return loss, grads


def critic_loss(bundle: PolicyBundle, agent: int, batch: Batch, gamma: float) -> float:
    if batch.states.shape[0] == 0:
        raise ValueError("empty batch")
    return critic_loss_and_grad(bundle, agent, batch, gamma)[0]


def actor_loss_and_grad(bundle: PolicyBundle, agent: int, states: np.ndarray,
                        joint_actions: np.ndarray):
    """``-mean Q(s, a(z))`` with the agent's own action from its current actor."""
    nets = bundle.agents[agent]
    mu, a_acts = nets.actor.forward(states)
    cols = bundle.zonal_columns(agent)
    zonal = joint_actions[:, cols].copy()
    own = bundle.own_columns_in_zonal(agent)
    zonal[:, own] = mu
    q, c_acts = nets.critic.forward(np.hstack([states, zonal]))
    loss = -float(q.mean())
    _, d_in = nets.critic.backward(c_acts, np.full_like(q, -1.0 / q.shape[0]))
    d_mu = d_in[:, states.shape[1] + own]
    grads, _ = nets.actor.backward(a_acts, d_mu)
    return loss, grads


def actor_loss(bundle: PolicyBundle, agent: int, states: np.ndarray,
               joint_actions: np.ndarray) -> float:
    if states.shape[0] == 0:
        raise ValueError("empty batch")
    return actor_loss_and_grad(bundle, agent, states, joint_actions)[0]


def soft_update(bundle: PolicyBundle, agent: int, tau: float) -> None:
    nets = bundle.agents[agent]
    soft_update_params(nets.actor_target, nets.actor, tau)
    soft_update_params(nets.critic_target, nets.critic, tau)


def update_agents(bundle: PolicyBundle) -> dict[int, tuple[float, float]]:
    """One critic step, one actor step and a soft target update per learner."""
    cfg = bundle.config
    s, a, r, s2 = bundle.buffer.sample(cfg.batch_size, bundle.rng)
    batch = Batch(s, a, r, s2)
    next_joint = target_joint_actions(bundle, s2)
    losses = {}
    for n in bundle.learning:
        c_loss, grads = critic_loss_and_grad(bundle, n, batch, cfg.gamma, next_joint)
        bundle.agents[n].critic_opt.step(bundle.agents[n].critic.params, grads)
        losses[n] = (c_loss, 0.0)
    for n in bundle.learning:
        a_loss, grads = actor_loss_and_grad(bundle, n, s, a)
        bundle.agents[n].actor_opt.step(bundle.agents[n].actor.params, grads)
        losses[n] = (losses[n][0], a_loss)
    for n in bundle.learning:
        soft_update(bundle, n, cfg.tau)
    return losses


# Checkpoints -----------------------------------------------------------------

_NETS = ("actor", "critic", "actor_target", "critic_target")


def save_checkpoint(bundle: PolicyBundle, path) -> Path:
    """Write network parameters and metadata to an ``.npz`` file."""
    path = Path(path)
    arrays = {}
    for n, nets in bundle.agents.items():
        for name in _NETS:
            for key, val in getattr(nets, name).params.items():
                arrays[f"agent{n}/{name}/{key}"] = val
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": bundle.config.to_dict(),
        "config_hash": bundle.config.digest(),
        "seed": bundle.seed,
        "demand_scale": bundle.demand_scale.tolist(),
        "learning": bundle.learning,
        "n_producers": bundle.instance.n_producers,
    }
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path, instance: MarketInstance) -> PolicyBundle:
    """Rebuild a bundle for ``instance`` from :func:`save_checkpoint` output."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        config = MarlConfig.from_dict(meta["config"])
        if config.digest() != meta["config_hash"]:
            raise ValueError("checkpoint config hash mismatch")
        if meta["n_producers"] != instance.n_producers:
            raise ValueError("checkpoint was trained for a different number of producers")
        bundle = make_bundle(instance, config, meta["seed"], meta["demand_scale"])
        for n, nets in bundle.agents.items():
            for name in _NETS:
                net = getattr(nets, name)
                for key in net.params:
                    net.params[key] = data[f"agent{n}/{name}/{key}"].copy()
    bundle.noise = config.noise_end
    return bundle
