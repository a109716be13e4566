"""Return normalization, running-mean protocol, pooled seed statistics, reports."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import PreferenceDataset, build_sets
from .reward import _vec, cosine

DEFAULT_WINDOW = 8


class EvalError(ValueError):
    pass


def normalized_score(ret, random_ref: float, expert_ref: float):
    """100 * (ret - random) / (expert - random); unbounded either side."""
    if expert_ref == random_ref:
        raise EvalError("expert and random references coincide")
    return 100.0 * (np.asarray(ret, dtype=np.float64) - random_ref) / (expert_ref - random_ref)


@dataclass
class EvalTrace:
    """Evaluation events per seed: ``seeds[s] = [(epoch, [returns...]), ...]``."""

    seeds: List[List[Tuple[int, List[float]]]] = field(default_factory=list)

    def __post_init__(self):
        self.seeds = [[(int(e), [float(x) for x in r]) for e, r in s] for s in self.seeds]
        if not self.seeds:
            return
        epochs = [e for e, _ in self.seeds[0]]
        sizes = {len(r) for s in self.seeds for _, r in s}
        if any([e for e, _ in s] != epochs for s in self.seeds):
            raise EvalError("all seeds must share the same evaluation epochs")
        if len(sizes) > 1:
            raise EvalError(f"episodes per event must be constant, got {sorted(sizes)}")

    @property
    def S(self) -> int:
        return len(self.seeds)

    @property
    def n(self) -> int:
        return len(self.seeds[0][0][1]) if self.seeds and self.seeds[0] else 0

    @property
    def epochs(self) -> List[int]:
        return [e for e, _ in self.seeds[0]] if self.seeds else []

    def returns(self) -> np.ndarray:
        """Array of shape (S, events, n)."""
        return np.array([[r for _, r in s] for s in self.seeds], dtype=np.float64)

    def map(self, fn) -> "EvalTrace":
        return EvalTrace([[(e, list(fn(np.asarray(r)))) for e, r in s] for s in self.seeds])

    def to_dict(self):
        return {"seeds": [[[e, r] for e, r in s] for s in self.seeds]}

    @classmethod
    def from_dict(cls, d):
        return cls([[(e, r) for e, r in s] for s in d["seeds"]])


def running_curve(trace: EvalTrace, window: int = DEFAULT_WINDOW):
    """(epochs, per-seed curves (S, T)) of means over the last ``window`` events."""
    if window < 1:
        raise EvalError("window must be >= 1")
    R = trace.returns()
    if R.ndim != 3 or R.shape[1] < window:
        raise EvalError(f"need at least {window} evaluation events per seed")
    per_event = R.mean(axis=2)  # n is constant, so mean of means = mean over window*n
    csum = np.cumsum(per_event, axis=1)
    csum = np.concatenate([np.zeros((R.shape[0], 1)), csum], axis=1)
    curves = (csum[:, window:] - csum[:, :-window]) / window
    return trace.epochs[window - 1:], curves


def running_metric(trace: EvalTrace, window: int = DEFAULT_WINDOW):
    """Seed-averaged running mean curve and its maximum.

    Seeds are averaged before taking the maximum.
    """
    _, curves = running_curve(trace, window)
    curve = curves.mean(axis=0)
    return curve, float(curve.max())


def pooled_std(returns_per_seed: Sequence[Sequence[float]]):
    """(sigma_within, sigma_across, sigma_total) from S seeds of n returns each."""
    R = np.asarray(returns_per_seed, dtype=np.float64)
    if R.ndim != 2:
        raise EvalError("expected S lists of n returns")
    S, n = R.shape
    if S < 2 or n < 2:
        raise EvalError("pooled_std needs S >= 2 and n >= 2")
    corrected = R.std(axis=1) * math.sqrt(n / (n - 1))
    within2 = float(np.mean(corrected ** 2))
    across2 = float(np.var(R.mean(axis=1), ddof=1))
    return math.sqrt(within2), math.sqrt(across2), math.sqrt(within2 + across2)


def final_window_returns(trace: EvalTrace, window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Per seed, the last window*n returns flattened: shape (S, window*n)."""
    R = trace.returns()
    if R.shape[1] < window:
        raise EvalError(f"need at least {window} evaluation events per seed")
    return R[:, -window:, :].reshape(R.shape[0], -1)


def summarize(trace: EvalTrace, window: int = DEFAULT_WINDOW) -> Dict[str, float]:
    _, best = running_metric(trace, window)
    row = {"mean": best, "S": trace.S, "n": trace.n}
    if trace.S >= 2:
        row["sigma_total"] = pooled_std(final_window_returns(trace, window))[2]
    else:
        row["sigma_total"] = float("nan")
    return row


# ---------------------------------------------------------------------------
# latent export


def export_latents(enc, zp, zn, dataset, include_reference: bool = True) -> List[dict]:
    """One row per trajectory of the preferred/non-preferred sets.

    ``dataset`` may be a ``PreferenceDataset`` (sets are built from it) or
    anything with ``preferred``/``non_preferred`` lists. Reference rows for the
    group latents are appended when ``include_reference``.
    """
    sets = build_sets(dataset) if isinstance(dataset, PreferenceDataset) else dataset
    trajs = list(sets.preferred) + list(sets.non_preferred)
    cats = ["preferred"] * len(sets.preferred) + ["non_preferred"] * len(sets.non_preferred)
    Z = enc.trajectory_latents(trajs) if trajs else np.zeros((0, len(_vec(zp))))
    cp, cn = cosine(Z, _vec(zp)), cosine(Z, _vec(zn))
    rows = []
    for i, (t, c) in enumerate(zip(trajs, cats)):
        rows.append({"id": i, "category": c, "z": Z[i].tolist(), "cos_p": float(cp[i]),
                     "cos_n": float(cn[i]),
                     "true_return": t.ret() if t.true_rewards is not None else None})
    if include_reference:
        for name, z in (("z_star_p", zp), ("z_star_n", zn)):
            v = _vec(z)
            rows.append({"id": name, "category": "reference", "z": v.tolist(),
                         "cos_p": float(cosine(v, _vec(zp))), "cos_n": float(cosine(v, _vec(zn))),
                         "true_return": None})
    return rows


def write_latent_table(rows: List[dict], path) -> Path:
    path = Path(path)
    dim = len(rows[0]["z"]) if rows else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "category", "cos_p", "cos_n", "true_return"] + [f"z{j}" for j in range(dim)])
        for r in rows:
            ret = "" if r["true_return"] is None else repr(float(r["true_return"]))
            w.writerow([r["id"], r["category"], repr(r["cos_p"]), repr(r["cos_n"]), ret]
                       + [repr(float(x)) for x in r["z"]])
    return path


# ---------------------------------------------------------------------------
# reports


@dataclass
class ReportRow:
    task: str
    method: str
    mean: float
    sigma_total: float
    S: int
    n: int


def _fmt(x):
    return None if isinstance(x, float) and math.isnan(x) else round(float(x), 10)


def write_report(rows: Sequence[ReportRow], path_stem, meta: Optional[dict] = None):
    """Write ``<stem>.json`` and ``<stem>.csv``; values rounded to 1e-10 so
    reruns on the same machine serialize identically."""
    stem = Path(path_stem)
    data = {"meta": meta or {},
            "rows": [{"task": r.task, "method": r.method, "mean": _fmt(r.mean),
                      "sigma_total": _fmt(r.sigma_total), "S": r.S, "n": r.n} for r in rows]}
    json_path = stem.with_suffix(".json")
    json_path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    csv_path = stem.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task", "method", "mean", "sigma_total", "S", "n"])
        for r in data["rows"]:
            w.writerow([r["task"], r["method"], r["mean"], r["sigma_total"], r["S"], r["n"]])
    return json_path, csv_path


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())


__all__ = ["EvalError", "EvalTrace", "normalized_score", "running_curve", "running_metric",
           "pooled_std", "final_window_returns", "summarize", "export_latents",
           "write_latent_table", "ReportRow", "write_report", "read_report"]
