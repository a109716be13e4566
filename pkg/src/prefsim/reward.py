"""Rewards from similarity to the preferred group latent; relabeling and filtering."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .data import OfflineDataset, Trajectory
from .encoder import GroupLatent, SetEncoder


@dataclass
class RewardConfig:
    alpha: float = 0.0
    normalize: str = "min-max"
    prefix_mode: str = "full-history"

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.normalize not in ("min-max", "none"):
            raise ValueError(f"normalize must be 'min-max' or 'none', got {self.normalize!r}")
        if self.prefix_mode != "full-history":
            raise ValueError("only full-history prefixes are supported")


def _vec(z) -> np.ndarray:
    return z.z_star if isinstance(z, GroupLatent) else np.asarray(z, dtype=np.float64)


def cosine(a, b) -> np.ndarray:
    """Row-wise cosine similarity; either argument may be a single vector."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    return np.sum(a * b, axis=-1) / np.maximum(na * nb, 1e-12)


def similarity_from_latents(z, zp, zn=None, alpha: float = 0.0) -> np.ndarray:
    """cos(z, zp) - alpha * cos(z, zn)."""
    r = cosine(z, _vec(zp))
    if alpha > 0:
        if zn is None:
            raise ValueError("alpha > 0 needs the non-preferred group latent")
        r = r - alpha * cosine(z, _vec(zn))
    return r


def preference_probability(z_t, zp, zn) -> np.ndarray:
    """Logistic of the cosine gap between the preferred and non-preferred latents."""
    gap = cosine(z_t, _vec(zp)) - cosine(z_t, _vec(zn))
    return 1.0 / (1.0 + np.exp(-gap))


def prefix_rewards(enc: SetEncoder, zp, traj: Trajectory, config: RewardConfig = RewardConfig(),
                   zn=None) -> np.ndarray:
    """Unnormalized reward for every timestep of ``traj`` (one per prefix)."""
    if config.alpha > 0 and zn is None:
        raise ValueError("alpha > 0 needs the non-preferred group latent")
    return similarity_from_latents(enc.prefix_latents(traj), zp, zn, config.alpha)


def similarity_reward(enc: SetEncoder, zp, traj: Trajectory, t: int,
                      config: RewardConfig = RewardConfig(), zn=None) -> float:
    """Reward at step ``t``: the latent of ``traj[0..t]`` compared with the group latents."""
    if not 0 <= t < traj.H:
        raise ValueError(f"t={t} outside [0, {traj.H})")
    if config.alpha > 0 and zn is None:
        raise ValueError("alpha > 0 needs the non-preferred group latent")
    z = enc.trajectory_latents([traj.prefix(t)])[0]
    return float(similarity_from_latents(z, zp, zn, config.alpha))


def minmax_normalize(r: np.ndarray) -> np.ndarray:
    lo, hi = r.min(), r.max()
    if hi == lo:
        return np.full_like(r, 0.5)
    return (r - lo) / (hi - lo)


def relabel_with(offline: OfflineDataset, reward_fn: Callable[[Trajectory], np.ndarray],
                 normalize: str = "min-max") -> OfflineDataset:
    """Replace every transition reward by ``reward_fn`` applied per episode.

    The environment rewards stay in ``true_rewards``.
    """
    rewards = np.empty(len(offline))
    for i, traj in enumerate(offline.episodes()):
        s, e = offline.episode_bounds[i]
        rewards[s:e] = reward_fn(traj)
    if normalize == "min-max" and len(rewards):
        rewards = minmax_normalize(rewards)
    return offline.with_rewards(rewards)


def relabel_dataset(enc: SetEncoder, zp, offline: OfflineDataset,
                    config: RewardConfig = RewardConfig(), zn=None) -> OfflineDataset:
    return relabel_with(offline, lambda tr: prefix_rewards(enc, zp, tr, config, zn),
                        config.normalize)


@dataclass
class FilterResult:
    kept: list
    dropped: list
    scores: np.ndarray
    kept_mask: np.ndarray
    threshold: float


def filter_scores(enc: SetEncoder, zp, zn, trajs: Sequence[Trajectory]) -> np.ndarray:
    z = enc.trajectory_latents(list(trajs))
    return np.maximum(cosine(z, _vec(zp)), cosine(z, _vec(zn)))


def filter_trajectories(enc: SetEncoder, zp, zn, trajs: Sequence[Trajectory],
                        keep_quantile: float) -> FilterResult:
    """Drop trajectories that are far from both group latents.

    The score is the larger of the two cosine similarities; anything scoring
    below the ``1 - keep_quantile`` quantile is dropped.
    """
    if len(trajs) == 0:
        raise ValueError("no trajectories to filter")
    if not 0 < keep_quantile <= 1:
        raise ValueError("keep_quantile must lie in (0, 1]")
    scores = filter_scores(enc, zp, zn, trajs)
    threshold = float(np.quantile(scores, 1.0 - keep_quantile))
    mask = scores >= threshold
    return FilterResult([t for t, m in zip(trajs, mask) if m],
                        [t for t, m in zip(trajs, mask) if not m], scores, mask, threshold)


def write_score_table(result: FilterResult, path, ids: Optional[Sequence] = None) -> Path:
    path = Path(path)
    ids = list(ids) if ids is not None else list(range(len(result.scores)))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory_id", "score", "kept"])
        for i, s, k in zip(ids, result.scores, result.kept_mask):
            w.writerow([i, repr(float(s)), int(k)])
    return path
