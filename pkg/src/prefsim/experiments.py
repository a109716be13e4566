"""Desk-scale experiment protocols shared by the pipeline, the CLI and the tests.

Each protocol takes explicit integer seeds and returns plain data (dicts of
floats, lists, traces) so callers decide what to persist.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
import torch

from .baselines import ADTSchedule, BTConfig, BTRewardModel, train_bt
from .data import (PreferenceDataset, Trajectory, TrajectorySets, build_sets, drop_neutral,
                   inject_label_noise, label_dataset, sample_pairs)
from .encoder import EncoderConfig, GroupLatent, SetEncoder, infer_group_latents, train_encoder
from .envs import (HOPPER_TO_WALKER, REPLAY_MIXTURE, ScriptedPolicy, generate_offline_dataset,
                   make_env, map_simple_to_complex, mixture, rollout_batch, rotation_direction,
                   scripted_policy)
from .reward import (RewardConfig, cosine, filter_trajectories, preference_probability,
                     prefix_rewards, relabel_dataset)
from .rl import DDPGConfig, IQLConfig, train_ddpg_shaped, train_iql

VARIANTS = ("neutral", "no-neutral", "noisy", "script")
METHODS = ("sara", "bt", "bt-adt", "oracle")
DEFAULT_NOISE_RATE = 0.2


@dataclass
class DataConfig:
    n_episodes: int = 200
    mixture: Dict[str, float] = field(default_factory=lambda: dict(REPLAY_MIXTURE))
    segment_length: int = 25
    n_pairs: int = 100
    n_test_pairs: int = 200
    neutral_margin: float = 0.5

    def __post_init__(self):
        if self.n_episodes < 1 or self.n_pairs < 1 or self.n_test_pairs < 1:
            raise ValueError("episode and pair counts must be >= 1")
        if self.neutral_margin < 0:
            raise ValueError("neutral_margin must be >= 0")
        self.mixture = dict(self.mixture)


def parse_variant(variant: str) -> Tuple[str, float]:
    """``"noisy(0.3)"`` -> ("noisy", 0.3); plain ``"noisy"`` uses the default rate."""
    m = re.fullmatch(r"noisy\(\s*([0-9.eE+-]+)\s*\)", variant)
    if m:
        rate = float(m.group(1))
        if not 0 <= rate <= 1:
            raise ValueError(f"noise rate must lie in [0, 1], got {rate}")
        return "noisy", rate
    if variant == "noisy":
        return "noisy", DEFAULT_NOISE_RATE
    if variant in VARIANTS:
        return variant, 0.0
    raise ValueError(f"unknown dataset variant {variant!r}; expected one of {VARIANTS} "
                     "or noisy(rate)")


def make_variant(unlabeled: PreferenceDataset, variant: str, neutral_margin: float,
                 seed: int) -> PreferenceDataset:
    """Label raw pairs according to one of the four dataset variants.

    ``neutral`` keeps indifferent pairs at 0.5, ``no-neutral`` drops them,
    ``noisy`` flips a fixed fraction of script labels and ``script`` is the
    clean binary labeling.
    """
    kind, rate = parse_variant(variant)
    if kind in ("neutral", "no-neutral"):
        ds = label_dataset(unlabeled, "human-style", neutral_margin)
        return drop_neutral(ds) if kind == "no-neutral" else ds
    ds = label_dataset(unlabeled, "script")
    return inject_label_noise(ds, rate, seed) if kind == "noisy" else ds


# ---------------------------------------------------------------------------
# reward models


def fit_sara(sets: TrajectorySets, config: EncoderConfig):
    enc = train_encoder(config, sets)
    zp, zn = infer_group_latents(enc, sets)
    return enc, zp, zn


def sara_accuracy(enc: SetEncoder, zp, zn, dataset: PreferenceDataset) -> float:
    """Fraction of non-neutral pairs where the preferred side has the larger
    preference probability."""
    pairs = [p for p in dataset if p.label != 0.5]
    if not pairs:
        raise ValueError("no non-neutral pairs to score")
    p0 = preference_probability(enc.trajectory_latents([p.seg0 for p in pairs]), zp, zn)
    p1 = preference_probability(enc.trajectory_latents([p.seg1 for p in pairs]), zp, zn)
    y = np.array([p.label for p in pairs])
    return float(np.mean((p1 > p0) == (y == 1.0)))


def fit_bt(dataset: PreferenceDataset, config: BTConfig, use_adt: bool, seed: int,
           schedule: ADTSchedule = ADTSchedule()) -> BTRewardModel:
    """Seeded construction and training, so the initial weights repeat too."""
    torch.manual_seed(seed)
    model_dim = dataset.pairs[0].seg0.features.shape[1]
    return train_bt(BTRewardModel(model_dim, config), dataset, use_adt=use_adt, seed=seed,
                    schedule=schedule)


# ---------------------------------------------------------------------------
# separation


def separation_experiment(seed: int, config: EncoderConfig = EncoderConfig(epochs=300),
                          n_train: int = 40, n_test: int = 100, horizon: int = 40) -> dict:
    """Two LineHopper behaviors that differ in mean forward speed.

    Returns held-out classification accuracy of ``preference_probability > 0.5``
    and the cosine between the group latents before and after training.
    """
    env = make_env("LineHopper")
    rng = np.random.default_rng(seed)
    fast = ScriptedPolicy(env, (1.2, 1.0, 0.3), noise=0.2, name="fast")
    slow = ScriptedPolicy(env, (0.6, 1.0, 0.3), noise=0.2, name="slow")
    P, _ = rollout_batch(env, fast, horizon, n_train, rng)
    N, _ = rollout_batch(env, slow, horizon, n_train, rng)
    TP, _ = rollout_batch(env, fast, horizon, n_test, rng)
    TN, _ = rollout_batch(env, slow, horizon, n_test, rng)
    sets = TrajectorySets(P, N)
    cfg0 = replace(config, epochs=0, seed=seed)
    enc0, zp0, zn0 = fit_sara(sets, cfg0)
    enc, zp, zn = fit_sara(sets, replace(config, seed=seed))
    prob = preference_probability(enc.trajectory_latents(TP + TN), zp, zn)
    truth = np.r_[np.ones(n_test), np.zeros(n_test)]
    speed = np.array([t.states[:, 1].mean() for t in P + N])
    return {"accuracy": float(np.mean((prob > 0.5) == (truth == 1))),
            "cos_init": float(cosine(zp0.z_star, zn0.z_star)),
            "cos_trained": float(cosine(zp.z_star, zn.z_star)),
            "speed_gap": float(speed[:n_train].mean() - speed[n_train:].mean()),
            "encoder": enc, "zp": zp, "zn": zn, "sets": sets}


# ---------------------------------------------------------------------------
# filtering


def off_manifold_trajectories(rng, n: int, horizon: int, state_dim: int, action_dim: int,
                              scale: float = 3.0, env_id: str = ""):
    """Gaussian random-walk states with uniform actions, far from any rollout."""
    return [Trajectory(np.cumsum(rng.normal(0.0, 1.0, (horizon, state_dim)), 0) * scale,
                       rng.uniform(-1.0, 1.0, (horizon, action_dim)), None, env_id)
            for _ in range(n)]


def filtering_experiment(seed: int, config: EncoderConfig = EncoderConfig(epochs=300),
                         n_clean: int = 54, inject_fraction: float = 0.1,
                         keep_quantile: float = 0.9, horizon: int = 50) -> dict:
    """Inject off-manifold trajectories into the preferred set, train on the
    contaminated sets, then filter the preferred set."""
    env = make_env("LineHopper")
    rng = np.random.default_rng(seed)
    P, _ = rollout_batch(env, scripted_policy(env, "expert"), horizon, n_clean, rng)
    N, _ = rollout_batch(env, scripted_policy(env, "medium"), horizon, n_clean, rng)
    n_inj = max(1, int(round(inject_fraction * n_clean / (1 - inject_fraction))))
    inj = off_manifold_trajectories(rng, n_inj, horizon, env.spec.state_dim,
                                    env.spec.action_dim, env_id=env.spec.name)
    sets = TrajectorySets(P + inj, N)
    enc, zp, zn = fit_sara(sets, replace(config, seed=seed))
    res = filter_trajectories(enc, zp, zn, sets.preferred, keep_quantile)
    injected = np.r_[np.zeros(n_clean, bool), np.ones(n_inj, bool)]
    return {"injected_dropped": float(np.mean(~res.kept_mask[injected])),
            "clean_dropped": float(np.mean(~res.kept_mask[~injected])),
            "n_injected": n_inj, "n_clean": n_clean, "result": res, "injected_mask": injected}


# ---------------------------------------------------------------------------
# cross-task transfer


def transfer_experiment(seed: int, config: EncoderConfig = EncoderConfig(epochs=300),
                        iql: IQLConfig = IQLConfig(), data: DataConfig = DataConfig(),
                        reward: RewardConfig = RewardConfig()) -> dict:
    """IQL on TwinWalker with rewards from an encoder trained on LineHopper
    preferences lifted into TwinWalker dimensions, next to the native run."""
    src, tgt = make_env("LineHopper"), make_env("TwinWalker")
    ss = np.random.SeedSequence([seed, 0x7A5F]).generate_state(4)
    off_src = generate_offline_dataset(src, mixture(src, data.mixture), data.n_episodes,
                                       seed=int(ss[0]))
    off_tgt = generate_offline_dataset(tgt, mixture(tgt, data.mixture), data.n_episodes,
                                       seed=int(ss[1]))
    p_src = label_dataset(sample_pairs(off_src, data.segment_length, data.n_pairs, int(ss[2])))
    p_tgt = label_dataset(sample_pairs(off_tgt, data.segment_length, data.n_pairs, int(ss[3])))
    lift = lambda ts: [map_simple_to_complex(t, HOPPER_TO_WALKER) for t in ts]  # noqa: E731
    s_src = build_sets(p_src)
    runs = {"native": build_sets(p_tgt),
            "transfer": TrajectorySets(lift(s_src.preferred), lift(s_src.non_preferred))}
    out = {}
    for tag, sets in runs.items():
        enc, zp, zn = fit_sara(sets, replace(config, seed=seed))
        rel = relabel_dataset(enc, zp, off_tgt, reward, zn)
        res = train_iql(rel, replace(iql, seed=seed), env=tgt)
        out[tag] = res.evaluations
    return out


# ---------------------------------------------------------------------------
# online reward shaping


def reacher_preference_sets(seed: int, n: int = 40) -> TrajectorySets:
    """Counterclockwise expert rollouts preferred over clockwise ones."""
    env = make_env("DiskReacher-hard")
    rng = np.random.default_rng(seed)
    ccw, _ = rollout_batch(env, scripted_policy(env, "ccw"), env.spec.horizon, n, rng)
    cw, _ = rollout_batch(env, scripted_policy(env, "cw"), env.spec.horizon, n, rng)
    return TrajectorySets(ccw, cw)


def shaping_experiment(seed: int, weights=(0.0, 1.0),
                       config: EncoderConfig = EncoderConfig(epochs=300),
                       ddpg: DDPGConfig = DDPGConfig(), reward: RewardConfig = RewardConfig(),
                       encoder_bundle: Optional[tuple] = None) -> dict:
    """DDPG on DiskReacher-hard for each shaping weight.

    Returns, per weight, the counterclockwise fraction of evaluation episodes,
    their mean task return and mean cosine to each group latent.
    """
    env = make_env("DiskReacher-hard")
    if encoder_bundle is None:
        sets = reacher_preference_sets(seed)
        encoder_bundle = fit_sara(sets, replace(config, seed=seed))
    enc, zp, zn = encoder_bundle
    shaper = lambda tr: prefix_rewards(enc, zp, tr, RewardConfig(alpha=reward.alpha), zn)  # noqa: E731
    out = {}
    for lam in weights:
        res = train_ddpg_shaped(env, shaper,
                                replace(ddpg, shaping_weight=lam, seed=seed))
        eps = res.final_episodes
        z = enc.trajectory_latents(eps)
        out[float(lam)] = {
            "ccw_fraction": float(np.mean([rotation_direction(t) == 1 for t in eps])),
            "task_return": float(np.mean([t.ret() for t in eps])),
            "cos_p": float(cosine(z, zp.z_star).mean()),
            "cos_n": float(cosine(z, zn.z_star).mean()),
            "training_returns": res.episode_returns,
        }
    return out


def latent_similarity(enc: SetEncoder, zp: GroupLatent, zn: GroupLatent, trajs) -> Tuple[float, float]:
    z = enc.trajectory_latents(list(trajs))
    return float(cosine(z, zp.z_star).mean()), float(cosine(z, zn.z_star).mean())
