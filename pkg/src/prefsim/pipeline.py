"""Seeded, resumable experiment pipeline.

Layout under ``config.outdir``::

    config.lock                      resolved config + hash
    seed_<k>/manifest.json           completed stages, output digests, failure
    seed_<k>/datasets/*.npz
    seed_<k>/checkpoints/*
    seed_<k>/metrics/*
    report.json, report.csv, curve.csv

Every random draw of a stage comes from ``stage_seed(root_seed, stage, k)``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import traceback
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from . import __version__
from .baselines import bt_reward_fn, load_bt, pair_accuracy, save_bt
from .config import ExperimentConfig, config_hash, config_to_dict
from .data import (build_sets, load_offline, load_preferences, label_dataset, sample_pairs,
                   save_offline, save_preferences)
from .encoder import GroupLatent, load_encoder, save_encoder
from .envs import generate_offline_dataset, make_env, mixture, reference_returns
from .evaluation import (EvalTrace, ReportRow, export_latents, normalized_score, pooled_std,
                         running_curve, summarize, write_latent_table, write_report)
from .experiments import (filtering_experiment, fit_bt, fit_sara, latent_similarity, make_variant,
                          reacher_preference_sets, sara_accuracy, shaping_experiment,
                          transfer_experiment)
from .reward import relabel_dataset, relabel_with, write_score_table
from .rl import save_policy, train_iql, write_metrics

log = logging.getLogger(__name__)

STAGES = ("gen-data", "label-variant", "train-method", "relabel", "train-policy", "evaluate")


class PipelineError(RuntimeError):
    pass


class ConfigMismatchError(PipelineError):
    pass


def stage_seed(root_seed: int, stage: str, seed_index: int) -> int:
    """Deterministic 32-bit seed from (root seed, stage name, seed index)."""
    ss = np.random.SeedSequence([int(root_seed), zlib.crc32(stage.encode()), int(seed_index)])
    return int(ss.generate_state(1)[0])


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _read_json(path: Path):
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# per-seed context


@dataclass
class SeedRun:
    config: ExperimentConfig
    seed: int
    root: Path
    chash: str
    manifest: dict = field(default_factory=dict)

    @property
    def datasets(self) -> Path:
        return self.root / "datasets"

    @property
    def checkpoints(self) -> Path:
        return self.root / "checkpoints"

    @property
    def metrics(self) -> Path:
        return self.root / "metrics"

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    def rng_seed(self, stage: str) -> int:
        return stage_seed(self.config.root_seed, stage, self.seed)

    def load_manifest(self):
        if self.manifest_path.exists():
            self.manifest = _read_json(self.manifest_path)
            if self.manifest.get("config_hash") != self.chash:
                raise ConfigMismatchError(
                    f"{self.root} was produced by config {self.manifest.get('config_hash')}, "
                    f"not {self.chash}")
        else:
            self.manifest = {"config_hash": self.chash, "seed": self.seed, "stages": {},
                             "failed": None}

    def save_manifest(self):
        _write_json(self.manifest_path, self.manifest)

    def stage_done(self, stage: str) -> bool:
        entry = self.manifest["stages"].get(stage)
        if not entry:
            return False
        return all((self.root / p).exists() and _sha256(self.root / p) == d
                   for p, d in entry["outputs"].items())

    def record(self, stage: str, outputs: Sequence[Path]):
        self.manifest["stages"][stage] = {
            "outputs": {str(Path(p).relative_to(self.root)): _sha256(Path(p)) for p in outputs}}
        failed = self.manifest.get("failed")
        if failed and failed.get("stage") == stage:
            self.manifest["failed"] = None
        self.save_manifest()


# ---------------------------------------------------------------------------
# stages; each reads its inputs from disk so any stage can resume alone


def _gen_data(run: SeedRun) -> List[Path]:
    cfg, d = run.config, run.config.data
    env = make_env(cfg.env)
    s = run.rng_seed("gen-data")
    ss = np.random.SeedSequence(s).generate_state(3)
    off = generate_offline_dataset(env, mixture(env, d.mixture), d.n_episodes, seed=int(ss[0]))
    raw = sample_pairs(off, d.segment_length, d.n_pairs, int(ss[1]))
    test = label_dataset(sample_pairs(off, d.segment_length, d.n_test_pairs, int(ss[2])), "script")
    return [save_offline(off, run.datasets / "offline.npz"),
            save_preferences(raw, run.datasets / "pairs_raw.npz"),
            save_preferences(test, run.datasets / "test_pairs.npz")]


def _label_variant(run: SeedRun) -> List[Path]:
    cfg = run.config
    raw = load_preferences(run.datasets / "pairs_raw.npz")
    prefs = make_variant(raw, cfg.variant, cfg.data.neutral_margin, run.rng_seed("label-variant"))
    labels = prefs.labels
    counts = {"n_pairs": len(prefs), "n_neutral": int(np.sum(labels == 0.5)),
              "n_seg1_preferred": int(np.sum(labels == 1.0)), "provenance": prefs.provenance}
    return [save_preferences(prefs, run.datasets / "prefs.npz"),
            _write_json(run.metrics / "labels.json", counts)]


def _train_method(run: SeedRun) -> List[Path]:
    cfg = run.config
    s = run.rng_seed("train-method")
    test = load_preferences(run.datasets / "test_pairs.npz")
    if cfg.method == "oracle":
        return [_write_json(run.metrics / "method.json", {"method": "oracle", "accuracy": None})]
    prefs = load_preferences(run.datasets / "prefs.npz")
    if cfg.method == "sara":
        sets = build_sets(prefs)
        enc, zp, zn = fit_sara(sets, replace(cfg.encoder, seed=s))
        acc = sara_accuracy(enc, zp, zn, test)
        ck = save_encoder(enc, run.checkpoints / "encoder.pt")
        lat = run.checkpoints / "group_latents.npz"
        np.savez(lat, z_p=zp.z_star, z_n=zn.z_star,
                 sizes=np.array([zp.source_set_size, zn.source_set_size]))
        table = write_latent_table(export_latents(enc, zp, zn, sets), run.metrics / "latents.csv")
        loss = enc.history["loss"]
        outputs = [ck, lat, table]
    else:
        model = fit_bt(prefs, cfg.bt, cfg.method == "bt-adt", s, cfg.adt)
        acc = pair_accuracy(model, test)
        outputs = [save_bt(model, run.checkpoints / "bt.pt")]
        loss = model.history["loss"]
    outputs.append(_write_json(run.metrics / "method.json",
                               {"method": cfg.method, "accuracy": acc, "final_loss": loss[-1]}))
    return outputs


def _load_latents(run: SeedRun):
    z = np.load(run.checkpoints / "group_latents.npz")
    sizes = z["sizes"]
    return (GroupLatent(z["z_p"], "preferred", int(sizes[0])),
            GroupLatent(z["z_n"], "non_preferred", int(sizes[1])))


def _relabel(run: SeedRun) -> List[Path]:
    cfg = run.config
    if cfg.method == "oracle":
        return [_write_json(run.metrics / "relabel.json", {"skipped": True})]
    off = load_offline(run.datasets / "offline.npz")
    if cfg.method == "sara":
        enc = load_encoder(run.checkpoints / "encoder.pt")
        zp, zn = _load_latents(run)
        rel = relabel_dataset(enc, zp, off, cfg.reward, zn)
    else:
        rel = relabel_with(off, bt_reward_fn(load_bt(run.checkpoints / "bt.pt")), cfg.reward.normalize)
    corr = float(np.corrcoef(rel.episode_returns("rewards"), off.episode_returns())[0, 1])
    return [save_offline(rel, run.datasets / "relabeled.npz"),
            _write_json(run.metrics / "relabel.json", {"skipped": False, "return_correlation": corr})]


def _train_policy(run: SeedRun) -> List[Path]:
    cfg = run.config
    src = "offline.npz" if cfg.method == "oracle" else "relabeled.npz"
    data = load_offline(run.datasets / src)
    iql_cfg = replace(cfg.iql, seed=run.rng_seed("train-policy"))
    res = train_iql(data, iql_cfg, env=make_env(cfg.env))
    return [save_policy(res.policy, run.checkpoints / "policy.pt", config_to_dict(cfg)["iql"]),
            write_metrics(res.metrics, run.metrics / "iql_metrics.csv"),
            _write_json(run.metrics / "evals.json",
                        {"events": [[step, rets] for step, rets in res.evaluations]})]


def _evaluate(run: SeedRun) -> List[Path]:
    cfg = run.config
    lo, hi = reference_returns(cfg.env)
    events = _read_json(run.metrics / "evals.json")["events"]
    norm = [[step, [float(x) for x in normalized_score(rets, lo, hi)]] for step, rets in events]
    trace = EvalTrace([norm])
    epochs, curves = running_curve(trace, cfg.eval.window)
    return [_write_json(run.metrics / "eval.json",
                        {"normalized_events": norm, "running_epochs": list(epochs),
                         "running_curve": curves[0].tolist(), "best": float(curves[0].max())})]


_STAGE_FNS = {"gen-data": _gen_data, "label-variant": _label_variant,
              "train-method": _train_method, "relabel": _relabel,
              "train-policy": _train_policy, "evaluate": _evaluate}


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class PipelineResult:
    report: Optional[dict]
    completed: List[int]
    failures: Dict[int, dict]

    @property
    def ok(self) -> bool:
        return not self.failures


def _check_lock(config: ExperimentConfig, outdir: Path, chash: str):
    lock = outdir / "config.lock"
    if lock.exists():
        prev = _read_json(lock)
        if prev.get("config_hash") != chash:
            raise ConfigMismatchError(
                f"{outdir} holds artifacts of config {prev.get('config_hash')}; this config "
                f"hashes to {chash}. Use a fresh --outdir.")
    else:
        outdir.mkdir(parents=True, exist_ok=True)
        body = config_to_dict(config)
        body.pop("outdir")
        _write_json(lock, {"config_hash": chash, "package_version": __version__, "config": body})


def run_seed(config: ExperimentConfig, seed: int, stages: Sequence[str] = STAGES,
             chash: Optional[str] = None) -> SeedRun:
    chash = chash or config_hash(config)
    run = SeedRun(config, seed, Path(config.outdir) / f"seed_{seed}", chash)
    for sub in (run.datasets, run.checkpoints, run.metrics):
        sub.mkdir(parents=True, exist_ok=True)
    run.load_manifest()
    for stage in stages:
        if run.stage_done(stage):
            log.info("seed %d: %s already complete", seed, stage)
            continue
        missing = [s for s in STAGES[:STAGES.index(stage)] if not run.stage_done(s)]
        if missing:
            run.manifest["failed"] = {"stage": stage, "error": f"prerequisite stages missing: {missing}"}
            run.save_manifest()
            break
        log.info("seed %d: running %s", seed, stage)
        try:
            outputs = _STAGE_FNS[stage](run)
        except Exception as e:  # recorded and reported; later stages are skipped
            run.manifest["failed"] = {"stage": stage, "error": f"{type(e).__name__}: {e}",
                                      "traceback": traceback.format_exc()}
            run.save_manifest()
            log.error("seed %d: stage %s failed: %s", seed, stage, e)
            break
        run.record(stage, outputs)
    return run


def run_pipeline(config: ExperimentConfig, stages: Optional[Sequence[str]] = None,
                 seeds: Optional[Sequence[int]] = None, report: bool = True) -> PipelineResult:
    """Run ``stages`` (default: all) for each seed, then aggregate.

    Torch runs single-threaded so repeated invocations give identical bytes.
    """
    stages = list(stages or STAGES)
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise PipelineError(f"unknown stages {unknown}; have {STAGES}")
    seeds = list(config.seeds if seeds is None else seeds)
    outdir = Path(config.outdir)
    chash = config_hash(config)
    _check_lock(config, outdir, chash)
    torch.set_num_threads(1)
    failures, completed = {}, []
    for k in seeds:
        run = run_seed(config, k, stages, chash)
        if run.manifest.get("failed"):
            failures[k] = {key: run.manifest["failed"][key] for key in ("stage", "error")}
        elif all(run.stage_done(s) for s in stages):
            completed.append(k)
    rep = aggregate(config, seeds) if report and "evaluate" in stages else None
    return PipelineResult(rep, completed, failures)


def aggregate(config: ExperimentConfig, seeds: Optional[Sequence[int]] = None) -> Optional[dict]:
    """Pool the evaluate outputs of all finished seeds into report.{json,csv}.

    Refuses seeds whose manifest hash differs from the config's.
    """
    outdir = Path(config.outdir)
    chash = config_hash(config)
    seeds = list(config.seeds if seeds is None else seeds)
    done, norm, accs, skipped = [], [], [], []
    for k in seeds:
        root = outdir / f"seed_{k}"
        mpath = root / "manifest.json"
        if not mpath.exists():
            skipped.append(k)
            continue
        manifest = _read_json(mpath)
        if manifest.get("config_hash") != chash:
            raise ConfigMismatchError(f"seed {k} artifacts come from config "
                                      f"{manifest.get('config_hash')}, expected {chash}")
        if "evaluate" not in manifest["stages"]:
            skipped.append(k)
            continue
        ev = _read_json(root / "metrics" / "eval.json")
        norm.append(ev["normalized_events"])
        acc = _read_json(root / "metrics" / "method.json").get("accuracy")
        if acc is not None:
            accs.append(acc)
        done.append(k)
    if not done:
        return None
    trace = EvalTrace(norm)
    window = config.eval.window
    stats = summarize(trace, window)
    task = f"{config.env}/{config.variant}"
    row = ReportRow(task, config.method, stats["mean"], stats["sigma_total"], stats["S"], stats["n"])
    meta = {"config_hash": chash, "package_version": __version__, "seeds": done,
            "missing_seeds": skipped, "window": window,
            "heldout_accuracy": float(np.mean(accs)) if accs else None,
            "heldout_accuracy_per_seed": accs}
    write_report([row], outdir / "report", meta)
    _write_curve(trace, window, outdir / "curve.csv")
    return {"rows": [row.__dict__], "meta": meta}


def _write_curve(trace: EvalTrace, window: int, path: Path):
    """Seed-averaged running curve with a pooled sigma band per evaluation epoch."""
    epochs, curves = running_curve(trace, window)
    R = trace.returns()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean", "sigma_total"])
        for j, e in enumerate(epochs):
            win = R[:, j:j + window, :].reshape(R.shape[0], -1)
            sig = pooled_std(win)[2] if trace.S >= 2 else float("nan")
            w.writerow([e, repr(round(float(curves[:, j].mean()), 10)), repr(round(sig, 10))])
    return path


def load_report(outdir) -> dict:
    return _read_json(Path(outdir) / "report.json")




# ---------------------------------------------------------------------------
# stand-alone protocols (filtering, transfer, shaping); same seeding rule


def _protocol_dir(config: ExperimentConfig, name: str) -> Path:
    d = Path(config.outdir) / name
    d.mkdir(parents=True, exist_ok=True)
    _check_lock(config, Path(config.outdir), config_hash(config))
    return d


def run_filter(config: ExperimentConfig, seeds: Optional[Sequence[int]] = None) -> dict:
    out = _protocol_dir(config, "filter")
    fc = config.filter
    per_seed = {}
    for k in (config.seeds if seeds is None else seeds):
        s = stage_seed(config.root_seed, "filter", k)
        r = filtering_experiment(s, config.encoder, fc.n_clean, fc.inject_fraction, fc.keep_quantile)
        sd = out / f"seed_{k}"
        sd.mkdir(exist_ok=True)
        ids = [f"clean_{i}" for i in range(r["n_clean"])] + [f"injected_{i}" for i in range(r["n_injected"])]
        write_score_table(r["result"], sd / "scores.csv", ids)
        per_seed[k] = {"injected_dropped": r["injected_dropped"], "clean_dropped": r["clean_dropped"],
                       "threshold": r["result"].threshold}
        _write_json(sd / "summary.json", per_seed[k])
    summary = {"config_hash": config_hash(config), "per_seed": {str(k): v for k, v in per_seed.items()},
               "injected_dropped": float(np.mean([v["injected_dropped"] for v in per_seed.values()])),
               "clean_dropped": float(np.mean([v["clean_dropped"] for v in per_seed.values()]))}
    _write_json(out / "summary.json", summary)
    return summary


def run_transfer(config: ExperimentConfig, seeds: Optional[Sequence[int]] = None) -> dict:
    """Native vs. LineHopper-transferred SARA rewards for TwinWalker IQL."""
    out = _protocol_dir(config, "transfer")
    lo, hi = reference_returns("TwinWalker")
    traces = {"native": [], "transfer": []}
    seeds = list(config.seeds if seeds is None else seeds)
    for k in seeds:
        s = stage_seed(config.root_seed, "transfer", k)
        r = transfer_experiment(s, config.encoder, config.iql, config.data, config.reward)
        sd = out / f"seed_{k}"
        sd.mkdir(exist_ok=True)
        _write_json(sd / "evals.json", {tag: [[st, rets] for st, rets in ev] for tag, ev in r.items()})
        for tag, ev in r.items():
            traces[tag].append([[st, [float(x) for x in normalized_score(rets, lo, hi)]]
                                for st, rets in ev])
    rows = []
    for tag in ("native", "transfer"):
        trace = EvalTrace(traces[tag])
        st = summarize(trace, config.eval.window)
        rows.append(ReportRow("TwinWalker/transfer", f"sara-{tag}", st["mean"], st["sigma_total"],
                              st["S"], st["n"]))
        _write_curve(trace, config.eval.window, out / f"curve_{tag}.csv")
    ratio = rows[1].mean / rows[0].mean if rows[0].mean else float("nan")
    meta = {"config_hash": config_hash(config), "seeds": seeds, "transfer_ratio": ratio}
    write_report(rows, out / "report", meta)
    return {"rows": [r.__dict__ for r in rows], "meta": meta}


def run_shaping(config: ExperimentConfig, seeds: Optional[Sequence[int]] = None) -> dict:
    """DiskReacher-hard DDPG per shaping weight; writes per-seed results and a
    category x condition similarity table for the heatmap."""
    out = _protocol_dir(config, "shaping")
    sc = config.shaping
    seeds = list(config.seeds if seeds is None else seeds)
    per_seed, heat = {}, {}
    for k in seeds:
        s = stage_seed(config.root_seed, "train-ddpg", k)
        sets = reacher_preference_sets(s, sc.n_preference_trajectories)
        bundle = fit_sara(sets, replace(config.encoder, seed=s))
        res = shaping_experiment(s, sc.weights, config.encoder, sc.ddpg, config.reward, bundle)
        sd = out / f"seed_{k}"
        sd.mkdir(exist_ok=True)
        _write_json(sd / "result.json", {str(w): v for w, v in res.items()})
        per_seed[k] = res
        cats = {"preferred set (ccw)": sets.preferred, "non-preferred set (cw)": sets.non_preferred}
        for name, trajs in cats.items():
            heat.setdefault(name, []).append(latent_similarity(*bundle, trajs))
        for w, v in res.items():
            heat.setdefault(f"policy lambda={w:g}", []).append((v["cos_p"], v["cos_n"]))
    with open(out / "heatmap.csv", "w", newline="") as fh:
        wtr = csv.writer(fh)
        wtr.writerow(["category", "cos_to_z_p", "cos_to_z_n"])
        for name, vals in heat.items():
            m = np.mean(vals, axis=0)
            wtr.writerow([name, repr(round(float(m[0]), 10)), repr(round(float(m[1]), 10))])
    summary = {"config_hash": config_hash(config), "seeds": seeds,
               "ccw_fraction": {f"{w:g}": float(np.mean([per_seed[k][float(w)]["ccw_fraction"]
                                                         for k in seeds])) for w in sc.weights},
               "task_return": {f"{w:g}": float(np.mean([per_seed[k][float(w)]["task_return"]
                                                        for k in seeds])) for w in sc.weights}}
    _write_json(out / "summary.json", summary)
    return summary


__all__ = ["STAGES", "PipelineError", "ConfigMismatchError", "PipelineResult", "stage_seed",
           "run_seed", "run_pipeline", "aggregate", "load_report", "run_filter", "run_transfer",
           "run_shaping"]
