from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..envs import Env, Policy, rollout_batch


def mlp(in_dim: int, out_dim: int, hidden: Sequence[int] = (64, 64), out_act=None) -> nn.Sequential:
    layers, d = [], in_dim
    for h in hidden:
        layers += [nn.Linear(d, h), nn.ReLU()]
        d = h
    layers.append(nn.Linear(d, out_dim))
    if out_act is not None:
        layers.append(out_act)
    return nn.Sequential(*layers)


def soft_update(target: nn.Module, source: nn.Module, rate: float):
    with torch.no_grad():
        for t, s in zip(target.parameters(), source.parameters()):
            t.mul_(1.0 - rate).add_(s, alpha=rate)


def expectile_loss(u, tau_e: float):
    """|tau - 1[u < 0]| * u^2, elementwise (numpy or torch)."""
    if not 0.0 < tau_e < 1.0:
        raise ValueError("expectile must lie in (0, 1)")
    if torch.is_tensor(u):
        weight = torch.where(u < 0, torch.tensor(1.0 - tau_e, dtype=u.dtype),
                             torch.tensor(tau_e, dtype=u.dtype))
        return weight * u.pow(2)
    u = np.asarray(u, dtype=np.float64)
    return np.where(u < 0, 1.0 - tau_e, tau_e) * u ** 2


class NetPolicy(Policy):
    """Deterministic tanh actor over normalized observations."""

    def __init__(self, actor: nn.Module, obs_mean=None, obs_std=None):
        self.actor = actor
        self.hidden = tuple(m.out_features for m in actor if isinstance(m, nn.Linear))[:-1]
        self.obs_mean = None if obs_mean is None else np.asarray(obs_mean, dtype=np.float32)
        self.obs_std = None if obs_std is None else np.asarray(obs_std, dtype=np.float32)

    def normalize(self, states):
        s = np.asarray(states, dtype=np.float32)
        if self.obs_mean is not None:
            s = (s - self.obs_mean) / self.obs_std
        return s

    @torch.no_grad()
    def __call__(self, states, rng=None):
        s = torch.as_tensor(self.normalize(np.atleast_2d(states)))
        return self.actor(s).numpy().astype(np.float64)


def evaluate_policy(env: Env, policy, n_episodes: int = 10, seed=0, horizon=None):
    """Raw (unnormalized) episode returns; the seed fixes the initial states."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    trajs, _ = rollout_batch(env, policy, horizon or env.spec.horizon, n_episodes,
                             np.random.default_rng(seed))
    return [t.ret() for t in trajs]


def evaluation_rollouts(env: Env, policy, n_episodes: int = 10, seed=0, horizon=None):
    trajs, _ = rollout_batch(env, policy, horizon or env.spec.horizon, n_episodes,
                             np.random.default_rng(seed))
    return trajs


POLICY_VERSION = 1


def save_policy(policy: NetPolicy, path, config: dict = None) -> Path:
    path = Path(path)
    first, last = policy.actor[0], [m for m in policy.actor if isinstance(m, nn.Linear)][-1]
    torch.save({"format_version": POLICY_VERSION, "kind": "policy",
                "in_dim": first.in_features, "out_dim": last.out_features,
                "hidden": policy.hidden, "obs_mean": policy.obs_mean, "obs_std": policy.obs_std,
                "state_dict": policy.actor.state_dict(), "config": config or {}}, path)
    return path


def load_policy(path) -> NetPolicy:
    ckpt = torch.load(Path(path), weights_only=False)
    if ckpt.get("format_version") != POLICY_VERSION or ckpt.get("kind") != "policy":
        raise ValueError(f"{path} is not a version-{POLICY_VERSION} policy archive")
    actor = mlp(ckpt["in_dim"], ckpt["out_dim"], ckpt["hidden"], nn.Tanh())
    actor.load_state_dict(ckpt["state_dict"])
    policy = NetPolicy(actor, ckpt["obs_mean"], ckpt["obs_std"])
    policy.config = ckpt["config"]
    return policy


def write_metrics(metrics: dict, path) -> Path:
    """Columns of equal-length lists as CSV, one row per logged step."""
    path = Path(path)
    keys = list(metrics)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for row in zip(*(metrics[k] for k in keys)):
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    return path
