"""Implicit Q-learning on a (possibly relabeled) offline dataset."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from ..data import OfflineDataset
from ..encoder import TrainingError
from ..envs import Env
from .common import NetPolicy, evaluate_policy, expectile_loss, mlp, soft_update

log = logging.getLogger(__name__)


@dataclass
class IQLConfig:
    expectile: float = 0.7
    awr_beta: float = 3.0
    discount: float = 0.99
    target_rate: float = 0.005
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    value_lr: float = 3e-4
    steps: int = 4000
    batch_size: int = 256
    hidden: tuple = (64, 64)
    awr_clip: float = 100.0
    reward_scale: float = 1.0
    eval_every: int = 200
    eval_episodes: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.expectile < 1:
            raise ValueError("expectile must lie in (0, 1)")
        if self.awr_beta <= 0:
            raise ValueError("awr_beta must be positive")
        if not 0 < self.discount <= 1:
            raise ValueError("discount must lie in (0, 1]")
        self.hidden = tuple(self.hidden)


@dataclass
class IQLResult:
    policy: NetPolicy
    metrics: dict = field(default_factory=dict)
    evaluations: list = field(default_factory=list)  # (step, [returns])


def q_target(rewards, next_values, terminals, discount):
    """Bellman target r + gamma * V(s') * (1 - done)."""
    return rewards + discount * next_values * (1.0 - terminals)


def awr_weights(advantages, beta, clip=100.0):
    return torch.clamp(torch.exp(beta * advantages), max=clip)


def train_iql(offline: OfflineDataset, config: IQLConfig = IQLConfig(),
              env: Optional[Env] = None) -> IQLResult:
    """Fit V by expectile regression on min(Q1, Q2), Q by TD on V(s'), and a
    deterministic actor by advantage-weighted regression onto dataset actions.

    Only the ``rewards`` column is read as reward. When ``env`` is given the
    policy is evaluated every ``eval_every`` steps.
    """
    if not np.isfinite(offline.rewards).all():
        raise ValueError("dataset rewards must be finite")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    obs_mean = offline.observations.mean(0)
    obs_std = np.maximum(offline.observations.std(0), 1e-3)
    f32 = lambda a: torch.as_tensor(np.asarray(a, dtype=np.float32))  # noqa: E731
    S = f32((offline.observations - obs_mean) / obs_std)
    S2 = f32((offline.next_observations - obs_mean) / obs_std)
    A = f32(offline.actions)
    R = f32(offline.rewards * config.reward_scale)
    D = f32(offline.terminals)
    ds, da = S.shape[1], A.shape[1]

    q1, q2 = mlp(ds + da, 1, config.hidden), mlp(ds + da, 1, config.hidden)
    q1_t, q2_t = copy.deepcopy(q1), copy.deepcopy(q2)
    vf = mlp(ds, 1, config.hidden)
    actor = mlp(ds, da, config.hidden, torch.nn.Tanh())
    q_opt = torch.optim.Adam(list(q1.parameters()) + list(q2.parameters()), lr=config.critic_lr)
    v_opt = torch.optim.Adam(vf.parameters(), lr=config.value_lr)
    pi_opt = torch.optim.Adam(actor.parameters(), lr=config.actor_lr)
    policy = NetPolicy(actor, obs_mean, obs_std)

    metrics = {"step": [], "v_loss": [], "q_loss": [], "actor_loss": []}
    evaluations = []
    n = len(S)
    for step in range(config.steps):
        idx = torch.as_tensor(rng.integers(0, n, config.batch_size))
        s, a, r, s2, d = S[idx], A[idx], R[idx], S2[idx], D[idx]
        sa = torch.cat([s, a], 1)
        with torch.no_grad():
            q_min = torch.min(q1_t(sa), q2_t(sa)).squeeze(1)
        v = vf(s).squeeze(1)
        v_loss = expectile_loss(q_min - v, config.expectile).mean()
        v_opt.zero_grad()
        v_loss.backward()
        v_opt.step()

        with torch.no_grad():
            target = q_target(r, vf(s2).squeeze(1), d, config.discount)
        q_loss = ((q1(sa).squeeze(1) - target) ** 2).mean() + ((q2(sa).squeeze(1) - target) ** 2).mean()
        q_opt.zero_grad()
        q_loss.backward()
        q_opt.step()

        with torch.no_grad():
            w = awr_weights(q_min - v.detach(), config.awr_beta, config.awr_clip)
        pi_loss = (w * ((actor(s) - a) ** 2).sum(1)).mean()
        pi_opt.zero_grad()
        pi_loss.backward()
        pi_opt.step()

        soft_update(q1_t, q1, config.target_rate)
        soft_update(q2_t, q2, config.target_rate)

        losses = (float(v_loss.detach()), float(q_loss.detach()), float(pi_loss.detach()))
        if not all(np.isfinite(losses)):
            raise TrainingError(f"IQL diverged at step {step}")
        if step % 50 == 0 or step == config.steps - 1:
            metrics["step"].append(step)
            metrics["v_loss"].append(losses[0])
            metrics["q_loss"].append(losses[1])
            metrics["actor_loss"].append(losses[2])
        if env is not None and (step + 1) % config.eval_every == 0:
            rets = evaluate_policy(env, policy, config.eval_episodes, seed=config.seed * 7919 + step)
            evaluations.append((step + 1, rets))
    log.info("IQL finished %d steps", config.steps)
    return IQLResult(policy, metrics, evaluations)
