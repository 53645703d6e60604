"""Zonal multi-agent actor-critic simulation of the clearing market."""

from .agents import (AgentAction, Batch, MarlConfig, PolicyBundle, actor_loss,
                     actor_loss_and_grad, critic_loss, critic_loss_and_grad, load_checkpoint,
                     make_bundle, policy_act, save_checkpoint, soft_update,
                     target_joint_actions, update_agents)
from .buffer import ReplayBuffer
from .env import EnvState, decode_action, make_state, shaped_reward, state_dim
from .networks import MLP, Adam
from .training import Evaluation, TraceRow, TrainingTrace, evaluate_policy, train_run

__all__ = [
    "Adam", "AgentAction", "Batch", "EnvState", "Evaluation", "MLP", "MarlConfig",
    "PolicyBundle", "ReplayBuffer", "TraceRow", "TrainingTrace", "actor_loss",
    "actor_loss_and_grad", "critic_loss", "critic_loss_and_grad", "decode_action",
    "evaluate_policy", "load_checkpoint", "make_bundle", "make_state", "policy_act",
    "save_checkpoint", "shaped_reward", "soft_update", "state_dim",
    "target_joint_actions", "train_run", "update_agents",
]
