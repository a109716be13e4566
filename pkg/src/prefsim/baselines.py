"""Bradley-Terry reward model and its adaptive-denoising (ADT) training variant."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import PreferenceDataset, Trajectory
from .encoder import DTYPE, TrainingError, pack, sinusoidal_encoding

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class BTConfig:
    d_model: int = 64
    ff_dim: int = 64
    n_layers: int = 1
    n_heads: int = 4
    steps: int = 1500
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.0


@dataclass
class ADTSchedule:
    gamma_adt: float = 0.003
    tau_max: float = 0.3

    def __post_init__(self):
        if self.gamma_adt <= 0:
            raise ValueError("gamma_adt must be positive")
        if not 0 <= self.tau_max < 1:
            raise ValueError("tau_max must lie in [0, 1)")


class BTRewardModel(nn.Module):
    """Causal sequence encoder with a linear per-timestep reward head.

    The reward at step t only sees steps 0..t, so relabeling a prefix and
    reading step t of the full sequence agree.
    """

    def __init__(self, input_dim: int, config: BTConfig = BTConfig()):
        super().__init__()
        self.config = config
        self.input_dim = input_dim
        self.register_buffer("feat_mean", torch.zeros(input_dim, dtype=DTYPE))
        self.register_buffer("feat_std", torch.ones(input_dim, dtype=DTYPE))
        self.embed = nn.Linear(input_dim, config.d_model)
        layer = nn.TransformerEncoderLayer(config.d_model, config.n_heads, config.ff_dim, 0.0,
                                           batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, config.n_layers, enable_nested_tensor=False)
        self.head = nn.Linear(config.d_model, 1)
        self.to(DTYPE)

    def fit_normalizer(self, trajs: Sequence[Trajectory]):
        feats = np.concatenate([t.features for t in trajs])
        self.feat_mean.copy_(torch.as_tensor(feats.mean(0)))
        self.feat_std.copy_(torch.as_tensor(np.maximum(feats.std(0), 1e-6)))

    def forward(self, X: torch.Tensor) -> torch.Tensor:
        """(B, L, F) -> per-timestep rewards (B, L)."""
        L = X.shape[1]
        h = self.embed((X - self.feat_mean) / self.feat_std)
        h = h + sinusoidal_encoding(L, self.config.d_model).to(h.dtype)
        mask = nn.Transformer.generate_square_subsequent_mask(L, dtype=h.dtype)
        h = self.encoder(h, mask=mask, is_causal=True)
        return self.head(h).squeeze(-1)

    @torch.no_grad()
    def rewards(self, traj: Trajectory) -> np.ndarray:
        X = torch.as_tensor(traj.features, dtype=DTYPE).unsqueeze(0)
        return self(X)[0].numpy()


def _stack(trajs):
    X, _ = pack(trajs)
    return X


def pair_logits(model: BTRewardModel, X0: torch.Tensor, X1: torch.Tensor) -> torch.Tensor:
    """Summed-reward gap sum r(seg1) - sum r(seg0), one per pair."""
    return model(X1).sum(1) - model(X0).sum(1)


def bt_probability(model: BTRewardModel, seg0: Trajectory, seg1: Trajectory) -> float:
    """P[seg1 preferred over seg0] under the Bradley-Terry model."""
    if seg0.features.shape != seg1.features.shape:
        raise ValueError("segments must share dimensions and length")
    with torch.no_grad():
        d = pair_logits(model, _stack([seg0]), _stack([seg1]))
    return float(torch.sigmoid(d)[0])


def per_query_losses(logits: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy between labels and sigmoid(logits), per pair."""
    return y * F.softplus(-logits) + (1.0 - y) * F.softplus(logits)


def bt_loss(model: BTRewardModel, batch) -> torch.Tensor:
    """Mean cross-entropy over ``(seg0, seg1, y)`` triples; neutral pairs target 0.5."""
    seg0, seg1, y = zip(*batch)
    logits = pair_logits(model, _stack(seg0), _stack(seg1))
    return per_query_losses(logits, torch.as_tensor(y, dtype=logits.dtype)).mean()


def adt_fraction(t: int, schedule: ADTSchedule = ADTSchedule()) -> float:
    """Fraction of queries to drop at step t: min(gamma * t, tau_max)."""
    if t < 0:
        raise ValueError("step must be >= 0")
    return min(schedule.gamma_adt * t, schedule.tau_max)


def adt_drop_count(t: int, batch_size: int, schedule: ADTSchedule = ADTSchedule()) -> int:
    """ceil(tau(t) * B), never above tau_max * B and always leaving one query."""
    tau = adt_fraction(t, schedule)
    n = math.ceil(tau * batch_size - 1e-9)
    cap = math.floor(schedule.tau_max * batch_size + 1e-9)
    return max(0, min(n, cap, batch_size - 1))


def train_bt(model: BTRewardModel, dataset: PreferenceDataset, use_adt: bool = False, seed=0,
             schedule: ADTSchedule = ADTSchedule()) -> BTRewardModel:
    """Minibatch Adam on the BT cross-entropy.

    With ``use_adt`` the ``adt_drop_count`` largest-loss queries of each batch
    are excluded from the gradient step; ``t`` counts gradient steps.
    """
    if len(dataset) == 0:
        raise ValueError("no pairs")
    cfg = model.config
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model.fit_normalizer([p.seg0 for p in dataset] + [p.seg1 for p in dataset])
    X0 = _stack([p.seg0 for p in dataset])
    X1 = _stack([p.seg1 for p in dataset])
    y = torch.as_tensor(dataset.labels, dtype=DTYPE)
    B = min(cfg.batch_size, len(dataset))
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    history = {"loss": [], "dropped": []}
    model.train()
    for step in range(cfg.steps):
        idx = torch.as_tensor(rng.choice(len(dataset), B, replace=False))
        losses = per_query_losses(pair_logits(model, X0[idx], X1[idx]), y[idx])
        n_drop = adt_drop_count(step, B, schedule) if use_adt else 0
        if n_drop:
            keep = torch.argsort(losses.detach(), stable=True)[: B - n_drop]
            loss = losses[keep].mean()
        else:
            loss = losses.mean()
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite BT loss at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        history["loss"].append(float(loss.detach()))
        history["dropped"].append(n_drop)
    model.eval()
    model.history = history
    log.info("BT model trained (adt=%s): final loss %.4g", use_adt, history["loss"][-1])
    return model


@torch.no_grad()
def pair_accuracy(model: BTRewardModel, dataset: PreferenceDataset) -> float:
    """Fraction of non-neutral pairs whose preferred side gets the higher probability."""
    pairs = [p for p in dataset if p.label != 0.5]
    if not pairs:
        raise ValueError("no non-neutral pairs to score")
    d = pair_logits(model, _stack([p.seg0 for p in pairs]), _stack([p.seg1 for p in pairs]))
    y = torch.as_tensor([p.label for p in pairs])
    return float(((d > 0).to(y.dtype) == y).to(torch.float64).mean())


def bt_reward_fn(model: BTRewardModel):
    """Per-timestep reward callable for ``reward.relabel_with``."""
    return model.rewards


def save_bt(model: BTRewardModel, path) -> Path:
    path = Path(path)
    torch.save({"format_version": CHECKPOINT_VERSION, "kind": "bt_reward_model",
                "config": asdict(model.config), "input_dim": model.input_dim,
                "state_dict": model.state_dict(),
                "history": getattr(model, "history", None)}, path)
    return path


def load_bt(path) -> BTRewardModel:
    ckpt = torch.load(Path(path), weights_only=False)
    if ckpt.get("format_version") != CHECKPOINT_VERSION or ckpt.get("kind") != "bt_reward_model":
        raise ValueError(f"{path} is not a version-{CHECKPOINT_VERSION} BT checkpoint")
    model = BTRewardModel(ckpt["input_dim"], BTConfig(**ckpt["config"]))
    model.load_state_dict(ckpt["state_dict"])
    model.history = ckpt.get("history")
    model.eval()
    return model
