"""Reinforcement-learning agents and their training loop."""
from .buffers import ReplayBuffer, RolloutBuffer, discounted_returns, gae
from .hparams import (ALGORITHMS, GRIDS, OFF_POLICY, ON_POLICY, SELECTED, AgentHyperparams,
                      default_hparams)
from .offpolicy import DDPG, SAC, TD3, SACAuto
from .onpolicy import A2C, ACKTR, PPO, TRPO, VPG

AGENTS = {cls.name: cls for cls in (VPG, A2C, TRPO, ACKTR, PPO, DDPG, TD3, SAC, SACAuto)}


def make_agent(algo, state_dim, hp=None, seed=0):
    if algo not in AGENTS:
        raise ValueError(f"unknown algorithm {algo!r}; choose from {', '.join(ALGORITHMS)}")
    return AGENTS[algo](state_dim, hp or default_hparams(algo), seed)
