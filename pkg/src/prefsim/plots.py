"""Figures from pipeline outputs; every figure ships with the CSV behind it."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE = dict(dpi=120, metadata={"Software": None})


def _read_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return Path(path)


def _num(x):
    return float("nan") if x in ("", "None", None) else float(x)


def plot_variant_bars(rows: Sequence[dict], path) -> Tuple[Path, Path]:
    """One marker with a sigma error bar per (method, variant).

    ``rows`` carry ``method``, ``variant``, ``mean`` and ``sigma_total``.
    """
    path = Path(path)
    variants = sorted({r["variant"] for r in rows})
    methods = sorted({r["method"] for r in rows})
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / max(len(methods), 1)
    for j, m in enumerate(methods):
        xs, ys, es = [], [], []
        for i, v in enumerate(variants):
            hit = [r for r in rows if r["method"] == m and r["variant"] == v]
            if hit:
                xs.append(i - 0.4 + width * (j + 0.5))
                ys.append(_num(hit[0]["mean"]))
                es.append(np.nan_to_num(_num(hit[0]["sigma_total"])))
        ax.errorbar(xs, ys, yerr=es, fmt="o", capsize=3, label=m)
    ax.set_xticks(range(len(variants)), variants)
    ax.set_ylabel("normalized return")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    data = _write_csv(path.with_suffix(".csv"), ["method", "variant", "mean", "sigma_total"],
                      [[r["method"], r["variant"], r["mean"], r["sigma_total"]] for r in rows])
    return path, data


def plot_learning_curves(curves: Dict[str, Tuple[Sequence, Sequence, Sequence]], path):
    """Mean curve per label with a shaded band of +/- sigma_total."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    table = []
    for label, (x, mean, sig) in curves.items():
        x, mean, sig = (np.asarray(v, dtype=float) for v in (x, mean, sig))
        ax.plot(x, mean, label=label)
        ax.fill_between(x, mean - np.nan_to_num(sig), mean + np.nan_to_num(sig), alpha=0.25)
        table += [[label, int(a), b, c] for a, b, c in zip(x, mean, sig)]
    ax.set_xlabel("gradient step")
    ax.set_ylabel("normalized return (running mean)")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    data = _write_csv(path.with_suffix(".csv"), ["label", "epoch", "mean", "sigma_total"], table)
    return path, data


def plot_heatmap(matrix, row_labels: Sequence[str], col_labels: Sequence[str], path):
    path = Path(path)
    M = np.asarray(matrix, dtype=float)
    if M.shape != (len(row_labels), len(col_labels)):
        raise ValueError(f"matrix shape {M.shape} does not match labels "
                         f"({len(row_labels)}, {len(col_labels)})")
    fig, ax = plt.subplots(figsize=(5, 0.5 * len(row_labels) + 1.5))
    im = ax.imshow(M, cmap="coolwarm", vmin=-1, vmax=1, aspect="auto")
    ax.set_xticks(range(len(col_labels)), col_labels)
    ax.set_yticks(range(len(row_labels)), row_labels)
    for i in range(M.shape[0]):
        for j in range(M.shape[1]):
            ax.text(j, i, f"{M[i, j]:.2f}", ha="center", va="center", fontsize=8)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    data = _write_csv(path.with_suffix(".csv"), ["category"] + list(col_labels),
                      [[r] + list(v) for r, v in zip(row_labels, M.tolist())])
    return path, data


def _curve_from_csv(path):
    rows = _read_csv(path)
    return ([int(r["epoch"]) for r in rows], [_num(r["mean"]) for r in rows],
            [_num(r["sigma_total"]) for r in rows])


def emit_plots(outdir, figdir=None):
    """Render every figure whose inputs exist under ``outdir``.

    Looks for a pipeline report (learning curve), sibling experiment reports one
    level down (variant comparison), transfer curves and the shaping heatmap
    table. Returns ``(written, missing)``; missing inputs are listed, not fatal.
    """
    outdir = Path(outdir)
    figdir = Path(figdir or outdir / "figures")
    figdir.mkdir(parents=True, exist_ok=True)
    written, missing = [], []

    if (outdir / "curve.csv").exists():
        rep = json.loads((outdir / "report.json").read_text())
        label = rep["rows"][0]["method"]
        written += plot_learning_curves({label: _curve_from_csv(outdir / "curve.csv")},
                                        figdir / "learning_curve.png")
    else:
        missing.append(str(outdir / "curve.csv"))

    sub_reports = sorted(outdir.glob("*/report.json"))
    variant_rows = []
    for rp in sub_reports:
        rep = json.loads(rp.read_text())
        for r in rep["rows"]:
            task = r["task"]
            if "/" in task and not task.endswith("/transfer"):
                variant_rows.append({**r, "variant": task.split("/", 1)[1]})
    if variant_rows:
        written += plot_variant_bars(variant_rows, figdir / "variants.png")
    else:
        missing.append(str(outdir / "*/report.json"))

    tdir = outdir / "transfer"
    if (tdir / "curve_native.csv").exists() and (tdir / "curve_transfer.csv").exists():
        written += plot_learning_curves(
            {tag: _curve_from_csv(tdir / f"curve_{tag}.csv") for tag in ("native", "transfer")},
            figdir / "transfer_curves.png")
    else:
        missing.append(str(tdir / "curve_*.csv"))

    heat = outdir / "shaping" / "heatmap.csv"
    if heat.exists():
        rows = _read_csv(heat)
        cols = [c for c in rows[0] if c != "category"]
        written += plot_heatmap([[_num(r[c]) for c in cols] for r in rows],
                                [r["category"] for r in rows], cols, figdir / "reacher_heatmap.png")
    else:
        missing.append(str(heat))
    return [str(p) for p in written], missing
