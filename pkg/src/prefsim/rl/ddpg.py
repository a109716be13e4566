"""Online DDPG whose task reward can be shaped by a preference-derived reward."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from ..data import Trajectory
from ..encoder import TrainingError
from ..envs import Env, rollout_batch
from .common import NetPolicy, mlp, soft_update

log = logging.getLogger(__name__)

Shaper = Callable[[Trajectory], np.ndarray]


@dataclass
class DDPGConfig:
    shaping_weight: float = 1.0
    discount: float = 0.99
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    hidden: tuple = (64, 64)
    target_rate: float = 0.005
    exploration_noise: float = 0.3
    episodes: int = 160
    n_envs: int = 4
    warmup_episodes: int = 8
    batch_size: int = 128
    updates_per_step: int = 1
    capacity: int = 100_000
    eval_episodes: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.shaping_weight < 0:
            raise ValueError("shaping_weight must be >= 0")
        if self.n_envs < 1 or self.episodes < 1:
            raise ValueError("episodes and n_envs must be >= 1")
        self.hidden = tuple(self.hidden)


class ReplayBuffer:
    """Fixed-capacity ring buffer of (s, a, r, s', done)."""

    def __init__(self, capacity: int, ds: int, da: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, ds), np.float32)
        self.a = np.zeros((capacity, da), np.float32)
        self.r = np.zeros(capacity, np.float32)
        self.s2 = np.zeros((capacity, ds), np.float32)
        self.d = np.zeros(capacity, np.float32)
        self.size = 0
        self._next = 0

    def add(self, s, a, r, s2, d):
        idx = (self._next + np.arange(len(s))) % self.capacity
        for buf, x in zip((self.s, self.a, self.r, self.s2, self.d), (s, a, r, s2, d)):
            buf[idx] = x
        self._next = int((self._next + len(s)) % self.capacity)
        self.size = min(self.size + len(s), self.capacity)

    def sample(self, rng, n):
        idx = rng.integers(0, self.size, n)
        return tuple(torch.as_tensor(x[idx]) for x in (self.s, self.a, self.r, self.s2, self.d))

    def __len__(self):
        return self.size


@dataclass
class DDPGResult:
    policy: NetPolicy
    episode_returns: list = field(default_factory=list)  # task return per training episode
    shaping_returns: list = field(default_factory=list)
    final_episodes: list = field(default_factory=list)   # evaluation trajectories


def train_ddpg_shaped(env: Env, shaper: Optional[Shaper] = None,
                      config: DDPGConfig = DDPGConfig()) -> DDPGResult:
    """DDPG on ``r_task + shaping_weight * r_pref``.

    ``shaper`` maps a finished episode to one preference reward per step. It is
    applied once per episode, so rewards of the whole prefix history are
    available; transitions enter the buffer only after the episode ends. With
    ``shaping_weight == 0`` the shaper is never called and training matches the
    unshaped run exactly.
    """
    if config.shaping_weight > 0 and shaper is None:
        raise ValueError("shaping_weight > 0 needs a shaper")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    ds, da, H = env.spec.state_dim, env.spec.action_dim, env.spec.horizon
    actor = mlp(ds, da, config.hidden, torch.nn.Tanh())
    critic = mlp(ds + da, 1, config.hidden)
    actor_t, critic_t = copy.deepcopy(actor), copy.deepcopy(critic)
    pi_opt = torch.optim.Adam(actor.parameters(), lr=config.actor_lr)
    q_opt = torch.optim.Adam(critic.parameters(), lr=config.critic_lr)
    policy = NetPolicy(actor)
    buf = ReplayBuffer(config.capacity, ds, da)
    result = DDPGResult(policy)

    def update():
        s, a, r, s2, d = buf.sample(rng, config.batch_size)
        with torch.no_grad():
            y = r + config.discount * (1 - d) * critic_t(torch.cat([s2, actor_t(s2)], 1)).squeeze(1)
        q_loss = ((critic(torch.cat([s, a], 1)).squeeze(1) - y) ** 2).mean()
        q_opt.zero_grad()
        q_loss.backward()
        q_opt.step()
        pi_loss = -critic(torch.cat([s, actor(s)], 1)).mean()
        pi_opt.zero_grad()
        pi_loss.backward()
        pi_opt.step()
        soft_update(actor_t, actor, config.target_rate)
        soft_update(critic_t, critic, config.target_rate)
        if not (torch.isfinite(q_loss) and torch.isfinite(pi_loss)):
            raise TrainingError("DDPG diverged")

    n_batches = -(-config.episodes // config.n_envs)
    done_eps = 0
    for b in range(n_batches):
        n = min(config.n_envs, config.episodes - done_eps)
        states = np.zeros((n, H + 1, ds))
        actions = np.zeros((n, H, da))
        task_r = np.zeros((n, H))
        states[:, 0] = env.reset(rng, n)
        warm = done_eps < config.warmup_episodes
        for t in range(H):
            if warm:
                a = rng.uniform(-1.0, 1.0, (n, da))
            else:
                a = policy(states[:, t]) + config.exploration_noise * rng.standard_normal((n, da))
                a = np.clip(a, -1.0, 1.0)
            states[:, t + 1], task_r[:, t] = env.step(states[:, t], a)
            actions[:, t] = a
            if len(buf) >= config.batch_size and not warm:
                for _ in range(config.updates_per_step * n):
                    update()
        total = task_r.copy()
        for i in range(n):
            traj = Trajectory(states[i, :H], actions[i], task_r[i], env.spec.name)
            if config.shaping_weight > 0:
                pref = np.asarray(shaper(traj), dtype=np.float64)
                if pref.shape != (H,):
                    raise ValueError(f"shaper returned shape {pref.shape}, expected ({H},)")
                total[i] += config.shaping_weight * pref
                result.shaping_returns.append(float(pref.sum()))
            result.episode_returns.append(float(task_r[i].sum()))
        # time-limit truncation is not a terminal state
        buf.add(states[:, :H].reshape(-1, ds), actions.reshape(-1, da), total.reshape(-1),
                states[:, 1:].reshape(-1, ds), np.zeros(n * H))
        done_eps += n
    log.info("DDPG finished %d episodes", done_eps)

    eval_rng = np.random.default_rng(config.seed + 104729)
    result.final_episodes, _ = rollout_batch(env, policy, H, config.eval_episodes, eval_rng)
    return result
