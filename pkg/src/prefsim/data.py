"""Trajectories, preference pairs, offline datasets and labeling protocols."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

SCHEMA_VERSION = 1
VALID_LABELS = (0.0, 0.5, 1.0)


class DatasetError(ValueError):
    pass


@dataclass(eq=False)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    true_rewards: Optional[np.ndarray] = None
    env_id: str = ""

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.states.ndim != 2 or self.actions.ndim != 2:
            raise DatasetError("states and actions must be 2-D (H, dim)")
        if len(self.states) != len(self.actions):
            raise DatasetError(
                f"{len(self.states)} states but {len(self.actions)} actions"
            )
        if len(self.states) < 1:
            raise DatasetError("trajectory must have at least one step")
        if not (np.isfinite(self.states).all() and np.isfinite(self.actions).all()):
            raise DatasetError("trajectory contains non-finite entries")
        if self.true_rewards is not None:
            self.true_rewards = np.asarray(self.true_rewards, dtype=np.float64)
            if self.true_rewards.shape != (len(self.states),):
                raise DatasetError("true_rewards length must equal H")
            if not np.isfinite(self.true_rewards).all():
                raise DatasetError("true_rewards contains non-finite entries")

    @property
    def H(self) -> int:
        return len(self.states)

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    @property
    def features(self) -> np.ndarray:
        """Per-timestep state and action concatenated, shape (H, ds + da)."""
        return np.concatenate([self.states, self.actions], axis=1)

    def ret(self) -> float:
        if self.true_rewards is None:
            raise DatasetError("trajectory has no true_rewards")
        return float(self.true_rewards.sum())

    def prefix(self, t: int) -> "Trajectory":
        """Steps 0..t inclusive."""
        rewards = None if self.true_rewards is None else self.true_rewards[: t + 1]
        return Trajectory(self.states[: t + 1], self.actions[: t + 1], rewards, self.env_id)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        if self.env_id != other.env_id:
            return False
        if (self.true_rewards is None) != (other.true_rewards is None):
            return False
        same_rewards = self.true_rewards is None or np.array_equal(
            self.true_rewards, other.true_rewards
        )
        return (
            same_rewards
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
        )


@dataclass(eq=False)
class PreferencePair:
    seg0: Trajectory
    seg1: Trajectory
    label: float = 0.0

    def __post_init__(self):
        if self.seg0.env_id != self.seg1.env_id:
            raise DatasetError("pair segments come from different environments")
        if self.seg0.H != self.seg1.H:
            raise DatasetError("pair segments differ in length")
        self.label = float(self.label)
        if self.label not in VALID_LABELS:
            raise DatasetError(f"label must be one of {VALID_LABELS}, got {self.label}")

    def __eq__(self, other):
        if not isinstance(other, PreferencePair):
            return NotImplemented
        return self.label == other.label and self.seg0 == other.seg0 and self.seg1 == other.seg1


@dataclass(eq=False)
class PreferenceDataset:
    pairs: list
    env_id: str
    H: int
    provenance: str = "human-style"

    def __post_init__(self):
        for p in self.pairs:
            if p.seg0.env_id != self.env_id or p.seg0.H != self.H:
                raise DatasetError("all pairs must share env_id and H")

    def __len__(self):
        return len(self.pairs)

    def __iter__(self) -> Iterator[PreferencePair]:
        return iter(self.pairs)

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.pairs], dtype=np.float64)

    def with_labels(self, labels: Sequence[float], provenance: Optional[str] = None):
        if len(labels) != len(self.pairs):
            raise DatasetError("label count does not match pair count")
        pairs = [PreferencePair(p.seg0, p.seg1, y) for p, y in zip(self.pairs, labels)]
        return PreferenceDataset(pairs, self.env_id, self.H, provenance or self.provenance)

    def subset(self, idx: Sequence[int]) -> "PreferenceDataset":
        return PreferenceDataset([self.pairs[i] for i in idx], self.env_id, self.H, self.provenance)

    def __eq__(self, other):
        if not isinstance(other, PreferenceDataset):
            return NotImplemented
        return (
            self.env_id == other.env_id
            and self.H == other.H
            and self.provenance == other.provenance
            and len(self.pairs) == len(other.pairs)
            and all(a == b for a, b in zip(self.pairs, other.pairs))
        )


@dataclass
class TrajectorySets:
    preferred: list
    non_preferred: list


@dataclass(eq=False)
class OfflineDataset:
    """Flat transition store with episode segmentation.

    ``episode_bounds[i] = (start, end)`` indexes transitions ``start:end`` of
    episode ``i``. ``true_rewards`` shadows ``rewards`` so relabeled datasets
    can still be scored against the environment reward.
    """

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_observations: np.ndarray
    terminals: np.ndarray
    episode_bounds: np.ndarray
    env_id: str
    true_rewards: Optional[np.ndarray] = None

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.next_observations = np.asarray(self.next_observations, dtype=np.float64)
        self.terminals = np.asarray(self.terminals, dtype=np.float64)
        self.episode_bounds = np.asarray(self.episode_bounds, dtype=np.int64).reshape(-1, 2)
        if self.true_rewards is None:
            self.true_rewards = self.rewards.copy()
        else:
            self.true_rewards = np.asarray(self.true_rewards, dtype=np.float64)
        n = len(self.observations)
        for name in ("actions", "rewards", "next_observations", "terminals", "true_rewards"):
            if len(getattr(self, name)) != n:
                raise DatasetError(f"{name} has {len(getattr(self, name))} rows, expected {n}")
        if not np.isfinite(self.rewards).all():
            raise DatasetError("rewards must be finite")
        expected = 0
        for start, end in self.episode_bounds:
            if start != expected or end <= start:
                raise DatasetError("episode_bounds must partition the transitions")
            expected = end
        if expected != n:
            raise DatasetError("episode_bounds must partition the transitions")

    def __len__(self):
        return len(self.observations)

    @property
    def n_episodes(self) -> int:
        return len(self.episode_bounds)

    def episode(self, i: int, reward_field: str = "true_rewards") -> Trajectory:
        start, end = self.episode_bounds[i]
        return Trajectory(
            self.observations[start:end],
            self.actions[start:end],
            getattr(self, reward_field)[start:end],
            self.env_id,
        )

    def episodes(self, reward_field: str = "true_rewards") -> Iterator[Trajectory]:
        for i in range(self.n_episodes):
            yield self.episode(i, reward_field)

    def episode_returns(self, reward_field: str = "true_rewards") -> np.ndarray:
        r = getattr(self, reward_field)
        return np.array([r[s:e].sum() for s, e in self.episode_bounds])

    def with_rewards(self, rewards: np.ndarray) -> "OfflineDataset":
        return OfflineDataset(
            self.observations, self.actions, rewards, self.next_observations,
            self.terminals, self.episode_bounds, self.env_id, self.true_rewards,
        )

    def __eq__(self, other):
        if not isinstance(other, OfflineDataset):
            return NotImplemented
        return self.env_id == other.env_id and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("observations", "actions", "rewards", "next_observations",
                      "terminals", "episode_bounds", "true_rewards")
        )

    @classmethod
    def from_trajectories(cls, trajs: Sequence[Trajectory], next_states: Sequence[np.ndarray],
                          env_id: str) -> "OfflineDataset":
        """Build from rollouts; ``next_states[i]`` is the state after the last action."""
        if not trajs:
            return cls.empty(env_id)
        obs, act, rew, nxt, bounds = [], [], [], [], []
        start = 0
        for traj, last in zip(trajs, next_states):
            obs.append(traj.states)
            act.append(traj.actions)
            rew.append(traj.true_rewards)
            nxt.append(np.vstack([traj.states[1:], np.asarray(last)[None]]))
            bounds.append((start, start + traj.H))
            start += traj.H
        n = start
        return cls(np.vstack(obs), np.vstack(act), np.concatenate(rew), np.vstack(nxt),
                   np.zeros(n), np.array(bounds), env_id)

    @classmethod
    def empty(cls, env_id: str, state_dim: int = 0, action_dim: int = 0) -> "OfflineDataset":
        return cls(np.zeros((0, state_dim)), np.zeros((0, action_dim)), np.zeros(0),
                   np.zeros((0, state_dim)), np.zeros(0), np.zeros((0, 2)), env_id)


# ---------------------------------------------------------------------------
# labeling protocols


def build_sets(dataset: PreferenceDataset) -> TrajectorySets:
    """Break labeled pairs apart into preferred / non-preferred sets.

    Neutral pairs contribute both segments to both sets; duplicates are kept.
    """
    if len(dataset) == 0:
        raise DatasetError("no pairs")
    preferred, non_preferred = [], []
    for p in dataset:
        if p.label == 0.0:
            preferred.append(p.seg0)
            non_preferred.append(p.seg1)
        elif p.label == 1.0:
            preferred.append(p.seg1)
            non_preferred.append(p.seg0)
        else:
            preferred.extend((p.seg0, p.seg1))
            non_preferred.extend((p.seg0, p.seg1))
    return TrajectorySets(preferred, non_preferred)


def noise_flip_indices(labels: np.ndarray, rate: float, seed) -> np.ndarray:
    """Indices of the non-neutral labels that ``inject_label_noise`` flips."""
    if not 0.0 <= rate <= 1.0:
        raise DatasetError(f"noise rate must lie in [0, 1], got {rate}")
    candidates = np.flatnonzero(np.asarray(labels) != 0.5)
    n_flip = int(round(rate * len(candidates)))
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(candidates, size=n_flip, replace=False))


def inject_label_noise(dataset: PreferenceDataset, rate: float, seed) -> PreferenceDataset:
    """Flip exactly ``round(rate * N_nonneutral)`` binary labels chosen uniformly."""
    labels = dataset.labels
    idx = noise_flip_indices(labels, rate, seed)
    labels[idx] = 1.0 - labels[idx]
    return dataset.with_labels(labels, provenance=f"noisy({rate:g})")


def script_label(seg0: Trajectory, seg1: Trajectory) -> float:
    """1 if seg1 has the strictly larger true return, else 0 (ties go to 0)."""
    if seg0.true_rewards is None or seg1.true_rewards is None:
        raise DatasetError("script labeling needs true_rewards on both segments")
    return 1.0 if seg1.ret() > seg0.ret() else 0.0


def human_style_label(seg0: Trajectory, seg1: Trajectory, neutral_margin: float) -> float:
    """Return comparison with an indifference band.

    Pairs whose returns differ by at most ``neutral_margin`` get the neutral
    label 0.5; the rest are labeled like ``script_label``.
    """
    r0, r1 = seg0.ret(), seg1.ret()
    if abs(r1 - r0) <= neutral_margin:
        return 0.5
    return 1.0 if r1 > r0 else 0.0


def label_dataset(dataset: PreferenceDataset, labeler: str = "script",
                  neutral_margin: float = 0.0) -> PreferenceDataset:
    if labeler == "script":
        labels = [script_label(p.seg0, p.seg1) for p in dataset]
    elif labeler == "human-style":
        labels = [human_style_label(p.seg0, p.seg1, neutral_margin) for p in dataset]
    else:
        raise DatasetError(f"unknown labeler {labeler!r}")
    return dataset.with_labels(labels, provenance=labeler)


def drop_neutral(dataset: PreferenceDataset) -> PreferenceDataset:
    keep = [i for i, p in enumerate(dataset) if p.label != 0.5]
    return dataset.subset(keep)


def sample_pairs(offline: OfflineDataset, H: int, n_pairs: int, seed) -> PreferenceDataset:
    """Draw ``n_pairs`` pairs of length-H segments (labels default to 0).

    Episode first, uniformly, then a uniform valid start index.
    """
    lengths = offline.episode_bounds[:, 1] - offline.episode_bounds[:, 0]
    if len(lengths) and lengths.min() < H:
        raise DatasetError(f"episode of length {lengths.min()} is shorter than H={H}")
    if n_pairs > 0 and len(lengths) == 0:
        raise DatasetError("offline dataset has no episodes")
    rng = np.random.default_rng(seed)

    def segment():
        ep = int(rng.integers(len(lengths)))
        start = int(rng.integers(lengths[ep] - H + 1))
        s = offline.episode_bounds[ep, 0] + start
        return Trajectory(offline.observations[s:s + H], offline.actions[s:s + H],
                          offline.true_rewards[s:s + H], offline.env_id)

    pairs = [PreferencePair(segment(), segment(), 0.0) for _ in range(n_pairs)]
    return PreferenceDataset(pairs, offline.env_id, H, provenance="unlabeled")


# ---------------------------------------------------------------------------
# on-disk container


def _header(kind: str, **fields) -> np.ndarray:
    head = {"kind": kind, "schema_version": SCHEMA_VERSION, **fields}
    return np.array(json.dumps(head, sort_keys=True))


def _read_header(archive) -> dict:
    head = json.loads(str(archive["header"]))
    if head.get("schema_version") != SCHEMA_VERSION:
        raise DatasetError(f"unsupported schema version {head.get('schema_version')}")
    return head


def save_preferences(dataset: PreferenceDataset, path) -> Path:
    """Write a preference dataset as one ``.npz`` container.

    Segments are stored once each in flat arrays; the pair table holds
    ``(seg0_idx, seg1_idx, label)`` rows.
    """
    path = Path(path)
    segments, index = [], {}

    def seg_id(traj):
        if id(traj) not in index:
            index[id(traj)] = len(segments)
            segments.append(traj)
        return index[id(traj)]

    table = np.array([(seg_id(p.seg0), seg_id(p.seg1), p.label) for p in dataset],
                     dtype=np.float64).reshape(-1, 3)
    has_rewards = np.array([s.true_rewards is not None for s in segments], dtype=bool)
    ds = segments[0].state_dim if segments else 0
    da = segments[0].action_dim if segments else 0
    H = dataset.H
    states = np.array([s.states for s in segments]).reshape(-1)
    actions = np.array([s.actions for s in segments]).reshape(-1)
    rewards = np.array([s.true_rewards if s.true_rewards is not None else np.zeros(H)
                        for s in segments]).reshape(-1)
    header = _header("preferences", env_id=dataset.env_id, H=H, n_pairs=len(dataset),
                     n_segments=len(segments), state_dim=ds, action_dim=da,
                     provenance=dataset.provenance)
    with open(path, "wb") as fh:
        np.savez(fh, header=header, states=states, actions=actions, rewards=rewards,
                 has_rewards=has_rewards, pairs=table)
    return path


def load_preferences(path) -> PreferenceDataset:
    with np.load(Path(path), allow_pickle=False) as z:
        head = _read_header(z)
        if head["kind"] != "preferences":
            raise DatasetError(f"{path} holds a {head['kind']} container")
        n, H, ds, da = head["n_segments"], head["H"], head["state_dim"], head["action_dim"]
        states = z["states"].reshape(n, H, ds)
        actions = z["actions"].reshape(n, H, da)
        rewards = z["rewards"].reshape(n, H)
        has_rewards = z["has_rewards"]
        table = z["pairs"]
    segs = [Trajectory(states[i], actions[i], rewards[i] if has_rewards[i] else None,
                       head["env_id"]) for i in range(n)]
    pairs = [PreferencePair(segs[int(a)], segs[int(b)], y) for a, b, y in table]
    return PreferenceDataset(pairs, head["env_id"], H, head["provenance"])


def save_offline(dataset: OfflineDataset, path) -> Path:
    path = Path(path)
    header = _header("offline", env_id=dataset.env_id, n_transitions=len(dataset),
                     n_episodes=dataset.n_episodes,
                     state_dim=dataset.observations.shape[1],
                     action_dim=dataset.actions.shape[1])
    with open(path, "wb") as fh:
        np.savez(fh, header=header, observations=dataset.observations,
                 actions=dataset.actions, rewards=dataset.rewards,
                 next_observations=dataset.next_observations,
                 terminals=dataset.terminals, episode_bounds=dataset.episode_bounds,
                 true_rewards=dataset.true_rewards)
    return path


def load_offline(path) -> OfflineDataset:
    with np.load(Path(path), allow_pickle=False) as z:
        head = _read_header(z)
        if head["kind"] != "offline":
            raise DatasetError(f"{path} holds a {head['kind']} container")
        return OfflineDataset(z["observations"], z["actions"], z["rewards"],
                              z["next_observations"], z["terminals"], z["episode_bounds"],
                              head["env_id"], z["true_rewards"])


def load_any(path):
    with np.load(Path(path), allow_pickle=False) as z:
        kind = _read_header(z)["kind"]
    return load_preferences(path) if kind == "preferences" else load_offline(path)
