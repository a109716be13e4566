"""Two-stage contrastive set encoder.

Stage 1 encodes each trajectory (state-action tokens with sinusoidal
positional encodings, then a mean over timesteps) into ``u``. Stage 2 lets
the members of a subset attend to each other, means over members and projects
to the latent ``z``. Training aligns same-category subset latents with an
NT-Xent loss while reshuffling subset membership every epoch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .data import Trajectory, TrajectorySets

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
DTYPE = torch.float64


class TrainingError(RuntimeError):
    pass


@dataclass
class EncoderConfig:
    d_model: int = 64
    ff_dim: int = 64
    z_dim: int = 16
    n_layers: int = 1
    n_heads: int = 4
    dropout: float = 0.0
    k_subsets: int = 2
    temperature: float = 0.1
    batch_size: Optional[int] = None  # None: the whole set every epoch
    epochs: int = 500
    lr_init: float = 1e-3
    lr_min: float = 1e-5
    seed: int = 0
    causal: bool = False
    subsequence_augment: bool = False
    subsequence_lengths: tuple = ()

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.k_subsets < 1:
            raise ValueError("k_subsets must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.lr_min > self.lr_init:
            raise ValueError("lr_min must not exceed lr_init")
        self.subsequence_lengths = tuple(self.subsequence_lengths)

    @classmethod
    def paper(cls, **overrides) -> "EncoderConfig":
        """Full-size settings (d_model 256, batch 256, lr 1e-5 -> 1e-6, 4000 epochs)."""
        base = dict(d_model=256, ff_dim=256, z_dim=16, n_layers=1, n_heads=4, dropout=0.0,
                    k_subsets=2, temperature=0.1, batch_size=256, epochs=4000,
                    lr_init=1e-5, lr_min=1e-6,
                    subsequence_lengths=(10, 20, 30, 40, 50, 60, 70, 80, 90, 100))
        base.update(overrides)
        return cls(**base)

    @classmethod
    def desk(cls, **overrides) -> "EncoderConfig":
        return cls(**overrides)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown encoder config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class GroupLatent:
    z_star: np.ndarray
    category: str
    source_set_size: int

    def __post_init__(self):
        self.z_star = np.asarray(self.z_star, dtype=np.float64)
        if not np.isfinite(self.z_star).all():
            raise ValueError("group latent is not finite")


def sinusoidal_encoding(length: int, d_model: int, dtype=DTYPE) -> torch.Tensor:
    pos = torch.arange(length, dtype=dtype).unsqueeze(1)
    div = torch.exp(torch.arange(0, d_model, 2, dtype=dtype) * (-math.log(10000.0) / d_model))
    pe = torch.zeros(length, d_model, dtype=dtype)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div[: d_model // 2])
    return pe


def _transformer(cfg: EncoderConfig) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(cfg.d_model, cfg.n_heads, cfg.ff_dim, cfg.dropout,
                                       batch_first=True)
    return nn.TransformerEncoder(layer, cfg.n_layers, enable_nested_tensor=False)


def masked_mean(h: torch.Tensor, lengths: Optional[torch.Tensor]) -> torch.Tensor:
    if lengths is None:
        return h.mean(dim=1)
    valid = (torch.arange(h.shape[1]).unsqueeze(0) < lengths.unsqueeze(1)).to(h.dtype)
    return (h * valid.unsqueeze(-1)).sum(1) / lengths.to(h.dtype).unsqueeze(1)


def pack(trajs: Sequence[Trajectory]):
    """Stack trajectory features, right-padding to the longest; returns (X, lengths)."""
    lengths = torch.tensor([t.H for t in trajs])
    L = int(lengths.max())
    F = trajs[0].features.shape[1]
    X = np.zeros((len(trajs), L, F))
    for i, t in enumerate(trajs):
        X[i, : t.H] = t.features
    return torch.as_tensor(X, dtype=DTYPE), lengths


class SetEncoder(nn.Module):
    def __init__(self, input_dim: int, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.input_dim = input_dim
        self.register_buffer("feat_mean", torch.zeros(input_dim, dtype=DTYPE))
        self.register_buffer("feat_std", torch.ones(input_dim, dtype=DTYPE))
        self.embed = nn.Linear(input_dim, config.d_model)
        self.stage1 = _transformer(config)
        self.stage2 = _transformer(config)
        self.head = nn.Linear(config.d_model, config.z_dim)
        self.to(DTYPE)

    def fit_normalizer(self, trajs: Sequence[Trajectory]):
        feats = np.concatenate([t.features for t in trajs])
        self.feat_mean.copy_(torch.as_tensor(feats.mean(0)))
        self.feat_std.copy_(torch.as_tensor(np.maximum(feats.std(0), 1e-6)))

    # -- stage 1 -------------------------------------------------------------
    def encode_sequences(self, X: torch.Tensor, lengths: Optional[torch.Tensor] = None):
        """(B, L, F) features -> (B, d_model) trajectory encodings ``u``."""
        if X.shape[-1] != self.input_dim:
            raise ValueError(f"feature dim {X.shape[-1]} != encoder input dim {self.input_dim}")
        L = X.shape[1]
        h = self.embed((X - self.feat_mean) / self.feat_std)
        h = h + sinusoidal_encoding(L, self.config.d_model).to(h.dtype)
        pad = None
        if lengths is not None:
            pad = torch.arange(L).unsqueeze(0) >= lengths.unsqueeze(1)
        mask = nn.Transformer.generate_square_subsequent_mask(L, dtype=h.dtype) if self.config.causal else None
        h = self.stage1(h, mask=mask, src_key_padding_mask=pad)
        return masked_mean(h, lengths)

    # -- stage 2 -------------------------------------------------------------
    def encode_sets(self, U: torch.Tensor) -> torch.Tensor:
        """(S, m, d_model) equal-size subsets -> (S, z_dim) latents."""
        return self.head(self.stage2(U).mean(dim=1))

    def encode_set(self, u: torch.Tensor) -> torch.Tensor:
        """(m, d_model) one subset -> (z_dim,)."""
        if u.shape[0] == 0:
            raise ValueError("cannot encode an empty subset")
        return self.encode_sets(u.unsqueeze(0))[0]

    # -- numpy-facing inference ----------------------------------------------
    @torch.no_grad()
    def encode_trajectories(self, trajs: Sequence[Trajectory]) -> np.ndarray:
        X, lengths = pack(trajs)
        return self.encode_sequences(X, lengths).numpy()

    @torch.no_grad()
    def trajectory_latents(self, trajs: Sequence[Trajectory], chunk: int = 512) -> np.ndarray:
        """Latent of each trajectory taken as a singleton subset, (B, z_dim)."""
        out = []
        for i in range(0, len(trajs), chunk):
            X, lengths = pack(trajs[i:i + chunk])
            u = self.encode_sequences(X, lengths)
            out.append(self.encode_sets(u.unsqueeze(1)).numpy())
        return np.concatenate(out) if out else np.zeros((0, self.config.z_dim))

    @torch.no_grad()
    def prefix_latents(self, traj: Trajectory) -> np.ndarray:
        """Latent of every prefix ``traj[0..t]``, shape (H, z_dim)."""
        H = traj.H
        X = torch.as_tensor(traj.features, dtype=DTYPE).unsqueeze(0).expand(H, H, -1)
        lengths = torch.arange(1, H + 1)
        u = self.encode_sequences(X.contiguous(), lengths)
        return self.encode_sets(u.unsqueeze(1)).numpy()


def _to_u(enc: SetEncoder, traj_or_u):
    if isinstance(traj_or_u, Trajectory):
        return torch.as_tensor(enc.encode_trajectories([traj_or_u])[0])
    return torch.as_tensor(np.asarray(traj_or_u), dtype=DTYPE)


def encode_trajectory(enc: SetEncoder, traj: Trajectory) -> np.ndarray:
    if traj.features.shape[1] != enc.input_dim:
        raise ValueError(f"trajectory feature dim {traj.features.shape[1]} != "
                         f"encoder input dim {enc.input_dim}")
    return enc.encode_trajectories([traj])[0]


@torch.no_grad()
def encode_subset(enc: SetEncoder, subset: Sequence) -> np.ndarray:
    """Subset of trajectory encodings ``u`` (or trajectories) -> latent ``z``."""
    if len(subset) == 0:
        raise ValueError("cannot encode an empty subset")
    U = torch.stack([_to_u(enc, x) for x in subset])
    return enc.encode_set(U).numpy()


def form_subsets(items: Sequence, k: int, rng) -> list:
    """Uniformly random partition into ``k`` subsets whose sizes differ by at most one."""
    if len(items) < k:
        raise ValueError(f"need at least k={k} items to form subsets, got {len(items)}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    perm = rng.permutation(len(items))
    return [[items[i] for i in part] for part in np.array_split(perm, k)]


def contrastive_loss(z_p, z_n, temperature: float) -> torch.Tensor:
    """Multi-positive NT-Xent over cosine similarities.

    Each latent is an anchor; its positives are the other latents of its own
    category and every other latent sits in the denominator.
    """
    z_p = torch.as_tensor(z_p) if not torch.is_tensor(z_p) else z_p
    z_n = torch.as_tensor(z_n) if not torch.is_tensor(z_n) else z_n
    if z_p.shape[0] < 2 or z_n.shape[0] < 2:
        raise ValueError("each category needs at least two latents so every anchor has a positive")
    z = torch.cat([z_p, z_n])
    z = z / z.norm(dim=1, keepdim=True).clamp_min(1e-12)
    sim = z @ z.T / temperature
    n = z.shape[0]
    cat = torch.cat([torch.zeros(len(z_p), dtype=torch.bool), torch.ones(len(z_n), dtype=torch.bool)])
    eye = torch.eye(n, dtype=torch.bool)
    pos = (cat.unsqueeze(0) == cat.unsqueeze(1)) & ~eye
    neg_inf = torch.finfo(sim.dtype).min
    log_num = torch.logsumexp(sim.masked_fill(~pos, neg_inf), dim=1)
    log_den = torch.logsumexp(sim.masked_fill(eye, neg_inf), dim=1)
    return (log_den - log_num).mean()


def _crop(X: torch.Tensor, length: int, rng: np.random.Generator) -> torch.Tensor:
    starts = rng.integers(0, X.shape[1] - length + 1, size=X.shape[0])
    idx = torch.as_tensor(starts).unsqueeze(1) + torch.arange(length).unsqueeze(0)
    return torch.gather(X, 1, idx.unsqueeze(-1).expand(-1, -1, X.shape[2]))


def train_encoder(config: EncoderConfig, sets: TrajectorySets) -> SetEncoder:
    """Contrastive training; the loss/lr trace is kept on ``encoder.history``.

    One Adam step per epoch on a freshly shuffled partition of each category,
    with a cosine learning-rate schedule from ``lr_init`` to ``lr_min``.
    """
    if not sets.preferred or not sets.non_preferred:
        raise ValueError("both trajectory sets must be non-empty")
    k = config.k_subsets
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    enc = SetEncoder(sets.preferred[0].features.shape[1], config)
    enc.fit_normalizer(list(sets.preferred) + list(sets.non_preferred))
    Xp, lp = pack(sets.preferred)
    Xn, ln = pack(sets.non_preferred)
    if len(Xp) < k or len(Xn) < k:
        raise ValueError(f"each set needs at least k={k} trajectories")
    equal_length = bool((lp == lp[0]).all() and (ln == lp[0]).all())
    opt = torch.optim.Adam(enc.parameters(), lr=config.lr_init)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(config.epochs, 1),
                                                       eta_min=config.lr_min)
    history = {"loss": [], "lr": []}
    enc.train()
    for epoch in range(config.epochs):
        us = []
        for X, lengths in ((Xp, lp), (Xn, ln)):
            if config.batch_size is not None and config.batch_size < len(X):
                pick = torch.as_tensor(np.sort(rng.choice(len(X), config.batch_size, replace=False)))
                X, lengths = X[pick], lengths[pick]
            if config.subsequence_augment and equal_length:
                choices = [L for L in config.subsequence_lengths if L <= X.shape[1]] or [X.shape[1]]
                X = _crop(X, int(rng.choice(choices)), rng)
                lengths = None
            elif equal_length:
                lengths = None
            us.append(enc.encode_sequences(X, lengths))
        zs = []
        for u in us:
            parts = form_subsets(list(range(len(u))), k, rng)
            zs.append(torch.stack([enc.encode_set(u[torch.as_tensor(p)]) for p in parts]))
        loss = contrastive_loss(zs[0], zs[1], config.temperature)
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite contrastive loss at epoch {epoch}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        history["loss"].append(float(loss.detach()))
        history["lr"].append(opt.param_groups[0]["lr"])
        sched.step()
    enc.eval()
    enc.history = history
    log.info("encoder trained: %d epochs, final loss %.4g", config.epochs,
             history["loss"][-1] if history["loss"] else float("nan"))
    return enc


@torch.no_grad()
def infer_group_latent(enc: SetEncoder, full_set: Sequence[Trajectory], category: str) -> GroupLatent:
    """Encode the whole labeled set as one subset (the frozen group latent)."""
    if len(full_set) == 0:
        raise ValueError("cannot infer a group latent from an empty set")
    X, lengths = pack(full_set)
    u = enc.encode_sequences(X, lengths)
    z = enc.encode_set(u)
    return GroupLatent(z.numpy(), category, len(full_set))


def infer_group_latents(enc: SetEncoder, sets: TrajectorySets):
    return (infer_group_latent(enc, sets.preferred, "preferred"),
            infer_group_latent(enc, sets.non_preferred, "non_preferred"))


def save_encoder(enc: SetEncoder, path) -> Path:
    path = Path(path)
    torch.save({"format_version": CHECKPOINT_VERSION, "kind": "set_encoder",
                "config": asdict(enc.config), "input_dim": enc.input_dim,
                "state_dict": enc.state_dict(),
                "history": getattr(enc, "history", None)}, path)
    return path


def load_encoder(path) -> SetEncoder:
    ckpt = torch.load(Path(path), weights_only=False)
    if ckpt.get("format_version") != CHECKPOINT_VERSION or ckpt.get("kind") != "set_encoder":
        raise ValueError(f"{path} is not a version-{CHECKPOINT_VERSION} set encoder checkpoint")
    enc = SetEncoder(ckpt["input_dim"], EncoderConfig.from_dict(ckpt["config"]))
    enc.load_state_dict(ckpt["state_dict"])
    enc.history = ckpt.get("history")
    enc.eval()
    return enc
