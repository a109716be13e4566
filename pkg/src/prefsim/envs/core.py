"""Synthetic continuous-control environments, scripted controllers and rollouts."""

from __future__ import annotations

import inspect
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..data import OfflineDataset, Trajectory
from ._backend import kernels
from ._physics import DT

HARD_TARGET = -2.6
EASY_TOLERANCE = 0.5
HARD_TOLERANCE = 0.05


class EnvError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    horizon: int
    dt: float = DT

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1 or self.horizon < 1:
            raise EnvError("state_dim, action_dim and horizon must be >= 1")


class Env:
    """Batched deterministic dynamics. ``step`` is a pure function."""

    spec: EnvSpec
    n_params: int

    def __init__(self, init_noise: float = 0.05):
        self.init_noise = init_noise

    @property
    def name(self) -> str:
        return self.spec.name

    def reset(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def step(self, states, actions):
        states, actions = self._check(states, actions)
        return self._step(states, actions)

    def scripted_rollout(self, init, params, noise):
        init = np.ascontiguousarray(init, dtype=np.float64)
        params = np.ascontiguousarray(params, dtype=np.float64).reshape(len(init), self.n_params)
        noise = np.ascontiguousarray(noise, dtype=np.float64)
        return self._rollout(init, params, noise)

    def controller(self, states, params):
        """Noise-free scripted controller output (unclipped), used by the step path."""
        raise NotImplementedError

    def _check(self, states, actions):
        states = np.ascontiguousarray(np.atleast_2d(states), dtype=np.float64)
        actions = np.ascontiguousarray(np.atleast_2d(actions), dtype=np.float64)
        if states.shape[1] != self.spec.state_dim:
            raise EnvError(f"{self.name}: state dim {states.shape[1]} != {self.spec.state_dim}")
        if actions.shape != (len(states), self.spec.action_dim):
            raise EnvError(f"{self.name}: action shape {actions.shape} does not match "
                           f"({len(states)}, {self.spec.action_dim})")
        return states, actions

    def __repr__(self):
        return f"{type(self).__name__}({self.spec.name!r})"


class LineHopper(Env):
    """State (x, v, theta, omega); one torque. Reward: forward velocity - control cost."""

    spec = EnvSpec("LineHopper", 4, 1, 50)
    n_params = 3

    def reset(self, rng, n):
        s = np.zeros((n, 4))
        s[:, 2:] = rng.uniform(-self.init_noise, self.init_noise, (n, 2))
        return s

    def _step(self, s, a):
        return kernels.hopper_step(s, a)

    def _rollout(self, init, params, noise):
        return kernels.hopper_rollout(init, params, noise)

    def controller(self, s, params):
        return (params[:, 0] - params[:, 1] * s[:, 2] - params[:, 2] * s[:, 3])[:, None]


class TwinWalker(Env):
    """State (x, v, theta_r, omega_r, theta_l, omega_l); right/left torques.

    Each leg follows the LineHopper joint dynamics with a weak spring coupling
    between the legs; thrust is the average of the two legs.
    """

    spec = EnvSpec("TwinWalker", 6, 2, 50)
    n_params = 4

    def reset(self, rng, n):
        s = np.zeros((n, 6))
        s[:, 2:] = rng.uniform(-self.init_noise, self.init_noise, (n, 4))
        return s

    def _step(self, s, a):
        return kernels.walker_step(s, a)

    def _rollout(self, init, params, noise):
        return kernels.walker_rollout(init, params, noise)

    def controller(self, s, params):
        ur = params[:, 0] - params[:, 2] * s[:, 2] - params[:, 3] * s[:, 3]
        ul = params[:, 1] - params[:, 2] * s[:, 4] - params[:, 3] * s[:, 5]
        return np.stack([ur, ul], axis=1)


class DiskReacher(Env):
    """Rotating arm reaching a target angle.

    State (cos th, sin th, th_dot, cos target, sin target). Task reward is minus
    the angular distance beyond the target tolerance, minus control cost. The
    "easy" mode draws the target uniformly and uses a wide tolerance; "hard"
    fixes the target in the lower half, where the clockwise path is the
    shorter one, and narrows the tolerance.
    """

    n_params = 3

    def __init__(self, mode: str = "easy", init_noise: float = 0.1):
        super().__init__(init_noise)
        if mode not in ("easy", "hard"):
            raise EnvError(f"unknown DiskReacher mode {mode!r}")
        self.mode = mode
        self.tolerance = EASY_TOLERANCE if mode == "easy" else HARD_TOLERANCE
        self.spec = EnvSpec(f"DiskReacher-{mode}", 5, 1, 50)

    def reset(self, rng, n):
        th = rng.uniform(-self.init_noise, self.init_noise, n)
        if self.mode == "easy":
            tgt = rng.uniform(-np.pi, np.pi, n)
        else:
            tgt = np.full(n, HARD_TARGET)
        return np.stack([np.cos(th), np.sin(th), np.zeros(n), np.cos(tgt), np.sin(tgt)], axis=1)

    def _step(self, s, a):
        return kernels.reacher_step(s, a, self.tolerance)

    def _rollout(self, init, params, noise):
        return kernels.reacher_rollout(init, params, noise, self.tolerance)

    def controller(self, s, params):
        from ._fallback import _reach_error
        e = _reach_error(np.arctan2(s[:, 1], s[:, 0]), np.arctan2(s[:, 4], s[:, 3]),
                         params[:, 0].astype(np.int64))
        return (params[:, 1] * e - params[:, 2] * s[:, 2])[:, None]


def rotation_direction(traj: Trajectory) -> int:
    """+1 counterclockwise, -1 clockwise, by the sign of net angular displacement."""
    net = traj.states[:, 2].sum()
    return 1 if net > 0 else -1


# ---------------------------------------------------------------------------
# policies


class Policy:
    """Maps a batch of states (n, ds) to actions (n, da); may draw from ``rng``."""

    def __call__(self, states: np.ndarray, rng: Optional[np.random.Generator] = None):
        raise NotImplementedError


class ScriptedPolicy(Policy):
    """Env-specific parametric controller plus Gaussian or uniform action noise.

    With ``uniform=True`` the controller parameters should be zero and the
    action is uniform on [-noise, noise] (the "random" policy).
    """

    def __init__(self, env: Env, params: Sequence[float], noise: float = 0.0,
                 uniform: bool = False, name: str = "scripted"):
        self.env = env
        self.params = np.asarray(params, dtype=np.float64).reshape(env.n_params)
        self.noise = float(noise)
        self.uniform = uniform
        self.name = name

    def draw_noise(self, rng, n, horizon):
        shape = (n, horizon, self.env.spec.action_dim)
        if self.noise == 0.0:
            return np.zeros(shape)
        if self.uniform:
            return rng.uniform(-self.noise, self.noise, shape)
        return self.noise * rng.standard_normal(shape)

    def __call__(self, states, rng=None):
        states = np.atleast_2d(states)
        a = self.env.controller(states, np.broadcast_to(self.params, (len(states), len(self.params))))
        if rng is not None:
            a = a + self.draw_noise(rng, len(states), 1)[:, 0]
        return np.clip(a, -1.0, 1.0)

    def __repr__(self):
        return f"ScriptedPolicy({self.name!r}, env={self.env.name!r})"


class FunctionPolicy(Policy):
    def __init__(self, fn: Callable):
        self.fn = fn
        try:
            self._takes_rng = len(inspect.signature(fn).parameters) >= 2
        except (TypeError, ValueError):
            self._takes_rng = False

    def __call__(self, states, rng=None):
        if self._takes_rng:
            return np.asarray(self.fn(states, rng), dtype=np.float64)
        return np.asarray(self.fn(states), dtype=np.float64)


def as_policy(policy) -> Policy:
    return policy if isinstance(policy, Policy) else FunctionPolicy(policy)


def zero_policy(env: Env) -> Policy:
    return FunctionPolicy(lambda s: np.zeros((len(s), env.spec.action_dim)))


SCRIPTED = {
    "LineHopper": {
        "expert": dict(params=(1.5, 1.0, 0.3), noise=0.1),
        "medium": dict(params=(0.5, 2.0, 0.5), noise=0.2),
        "random": dict(params=(0.0, 0.0, 0.0), noise=1.0, uniform=True),
    },
    "TwinWalker": {
        "expert": dict(params=(1.5, 1.5, 1.0, 0.3), noise=0.1),
        "medium": dict(params=(0.9, 0.1, 2.0, 0.5), noise=0.2),
        "random": dict(params=(0.0, 0.0, 0.0, 0.0), noise=1.0, uniform=True),
    },
    "DiskReacher": {
        "expert": dict(params=(0, 3.0, 0.6), noise=0.05),
        "ccw": dict(params=(1, 3.0, 0.6), noise=0.05),
        "cw": dict(params=(2, 3.0, 0.6), noise=0.05),
        "medium": dict(params=(0, 1.0, 0.2), noise=0.3),
        "random": dict(params=(0, 0.0, 0.0), noise=1.0, uniform=True),
    },
}


def scripted_policy(env: Env, kind: str) -> ScriptedPolicy:
    family = SCRIPTED[env.name.split("-")[0]]
    if kind not in family:
        raise EnvError(f"{env.name} has no scripted policy {kind!r}; have {sorted(family)}")
    return ScriptedPolicy(env, name=kind, **family[kind])


# ---------------------------------------------------------------------------
# rollouts


def _trajectories(env, states, actions, rewards):
    return [Trajectory(states[i], actions[i], rewards[i], env.name) for i in range(len(states))]


def rollout_batch(env: Env, policy, horizon: int, n: int, rng: np.random.Generator,
                  init: Optional[np.ndarray] = None):
    """Roll out ``n`` episodes in lockstep; returns (trajectories, final_states).

    Scripted policies run inside the kernel; anything else is stepped from Python.
    """
    policy = as_policy(policy)
    if init is None:
        init = env.reset(rng, n)
    if isinstance(policy, ScriptedPolicy) and policy.env.name == env.name:
        noise = policy.draw_noise(rng, n, horizon)
        params = np.tile(policy.params, (n, 1))
        S, A, R, final = env.scripted_rollout(init, params, noise)
        return _trajectories(env, S, A, R), final
    ds, da = env.spec.state_dim, env.spec.action_dim
    S = np.empty((n, horizon, ds))
    A = np.empty((n, horizon, da))
    R = np.empty((n, horizon))
    cur = np.asarray(init, dtype=np.float64)
    for t in range(horizon):
        a = np.asarray(policy(cur, rng), dtype=np.float64)
        if a.shape != (n, da):
            raise EnvError(f"policy returned actions of shape {a.shape}, expected {(n, da)}")
        a = np.clip(a, -1.0, 1.0)
        S[:, t], A[:, t] = cur, a
        cur, R[:, t] = env.step(cur, a)
    return _trajectories(env, S, A, R), cur


def rollout(env: Env, policy, horizon: Optional[int] = None, seed=0) -> Trajectory:
    horizon = horizon or env.spec.horizon
    trajs, _ = rollout_batch(env, policy, horizon, 1, np.random.default_rng(seed))
    return trajs[0]


def generate_offline_dataset(env: Env, policy_mixture, n_traj: int,
                             horizon: Optional[int] = None, seed=0) -> OfflineDataset:
    """Episodes whose policies are drawn by weight from ``policy_mixture``."""
    horizon = horizon or env.spec.horizon
    if not policy_mixture:
        raise EnvError("empty policy mixture")
    policies = [as_policy(p) for p, _ in policy_mixture]
    weights = np.array([w for _, w in policy_mixture], dtype=np.float64)
    if (weights < 0).any() or weights.sum() <= 0:
        raise EnvError("mixture weights must be non-negative with positive sum")
    if n_traj == 0:
        return OfflineDataset.empty(env.name, env.spec.state_dim, env.spec.action_dim)
    rng = np.random.default_rng(seed)
    choice = rng.choice(len(policies), size=n_traj, p=weights / weights.sum())
    trajs = [None] * n_traj
    finals = [None] * n_traj
    for k, pol in enumerate(policies):
        idx = np.flatnonzero(choice == k)
        if len(idx) == 0:
            continue
        group, last = rollout_batch(env, pol, horizon, len(idx), rng)
        for j, i in enumerate(idx):
            trajs[i], finals[i] = group[j], last[j]
    return OfflineDataset.from_trajectories(trajs, finals, env.name)


def mixture(env: Env, weights: dict):
    """``{"expert": 0.2, "random": 0.3}`` -> list of (ScriptedPolicy, weight)."""
    return [(scripted_policy(env, k), w) for k, w in weights.items()]


REPLAY_MIXTURE = {"random": 0.3, "medium": 0.5, "expert": 0.2}


# ---------------------------------------------------------------------------
# cross-morphology mapping


@dataclass(frozen=True)
class DimMapping:
    """Copy each source dimension onto a list of target dimensions."""

    source: EnvSpec
    target: EnvSpec
    state_map: tuple
    action_map: tuple

    def __post_init__(self):
        self._index(self.state_map, self.source.state_dim, self.target.state_dim)
        self._index(self.action_map, self.source.action_dim, self.target.action_dim)

    @staticmethod
    def _index(pairs, n_src, n_tgt):
        src_of = np.full(n_tgt, -1)
        for src, tgts in pairs:
            if not 0 <= src < n_src:
                raise EnvError(f"source dim {src} out of range [0, {n_src})")
            for t in tgts:
                if not 0 <= t < n_tgt:
                    raise EnvError(f"target dim {t} out of range [0, {n_tgt})")
                if src_of[t] != -1:
                    raise EnvError(f"target dim {t} mapped more than once")
                src_of[t] = src
        missing = np.flatnonzero(src_of < 0)
        if len(missing):
            raise EnvError(f"mapping leaves target dims {missing.tolist()} uncovered")
        return src_of

    @property
    def state_index(self):
        return self._index(self.state_map, self.source.state_dim, self.target.state_dim)

    @property
    def action_index(self):
        return self._index(self.action_map, self.source.action_dim, self.target.action_dim)


def identity_mapping(spec: EnvSpec) -> DimMapping:
    return DimMapping(spec, spec, tuple((i, (i,)) for i in range(spec.state_dim)),
                      tuple((i, (i,)) for i in range(spec.action_dim)))


HOPPER_TO_WALKER = DimMapping(
    LineHopper.spec, TwinWalker.spec,
    state_map=((0, (0,)), (1, (1,)), (2, (2, 4)), (3, (3, 5))),
    action_map=((0, (0, 1)),),
)


def map_simple_to_complex(traj: Trajectory, mapping: DimMapping) -> Trajectory:
    """Duplicate source dimensions onto the target layout; true rewards are dropped."""
    if traj.state_dim != mapping.source.state_dim or traj.action_dim != mapping.source.action_dim:
        raise EnvError(f"trajectory dims ({traj.state_dim}, {traj.action_dim}) do not match "
                       f"source spec {mapping.source.name}")
    states = traj.states[:, mapping.state_index]
    actions = traj.actions[:, mapping.action_index]
    if mapping.source == mapping.target:
        return Trajectory(states, actions, traj.true_rewards, traj.env_id)
    return Trajectory(states, actions, None, mapping.target.name)


def project_complex_to_simple(traj: Trajectory, mapping: DimMapping) -> Trajectory:
    """Inverse of the duplication: read each source dim from its first target copy."""
    s_first = [tgts[0] for _, tgts in sorted(mapping.state_map)]
    a_first = [tgts[0] for _, tgts in sorted(mapping.action_map)]
    return Trajectory(traj.states[:, s_first], traj.actions[:, a_first], None,
                      mapping.source.name)


# ---------------------------------------------------------------------------
# registry

# Mean returns over 100 episodes (seed 0) of the uniform-random and expert
# controllers; regenerated by ``measure_reference_returns``.
REFERENCE_RETURNS = {
    "LineHopper": (-0.378266622596331, 35.60317715117822),
    "TwinWalker": (-0.6544657926762065, 35.447005274703585),
    "DiskReacher-easy": (-61.63468619083121, -10.189990063572221),
    "DiskReacher-hard": (-121.43644321930122, -28.518119446131937),
}

_FACTORIES = {
    "LineHopper": LineHopper,
    "TwinWalker": TwinWalker,
    "DiskReacher-easy": lambda: DiskReacher("easy"),
    "DiskReacher-hard": lambda: DiskReacher("hard"),
}


def make_env(name: str) -> Env:
    try:
        return _FACTORIES[name]()
    except KeyError:
        raise EnvError(f"unknown environment {name!r}; have {sorted(_FACTORIES)}") from None


def env_names():
    return sorted(_FACTORIES)


def measure_reference_returns(name: str, n_episodes: int = 100, seed=0):
    env = make_env(name)
    refs = []
    for kind in ("random", "expert"):
        rng = np.random.default_rng(seed)
        trajs, _ = rollout_batch(env, scripted_policy(env, kind), env.spec.horizon, n_episodes, rng)
        refs.append(float(np.mean([t.ret() for t in trajs])))
    return tuple(refs)


def reference_returns(name: str):
    return REFERENCE_RETURNS[name]
