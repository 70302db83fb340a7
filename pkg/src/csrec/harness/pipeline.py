"""Experiment stages: generate data, train both models, evaluate, estimate TER."""
from __future__ import annotations

import datetime
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from typing import Optional

import numpy as np

from .. import constrained, metrics, seqrec, sim
from ..exceptions import MissingFtilde, RoleMismatch
from ..serialization import dump_file, sha256_bytes
from . import storage
from .config import EvalConfig, ExperimentConfig
from .storage import Checkpoint


def thread_count() -> int:
    """Worker threads for per-user simulation (``CSREC_THREADS``, default: all CPUs)."""
    raw = os.environ.get("CSREC_THREADS")
    if raw is None or raw == "":
        return os.cpu_count() or 1
    n = int(raw)
    if n < 1:
        raise ValueError("CSREC_THREADS must be >= 1")
    return n


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


# --------------------------------------------------------------------------
# data


def simulate(config: ExperimentConfig, threads: Optional[int] = None):
    """Catalog, per-user records and the user-level split for ``config``.

    Users are simulated in parallel; each has its own random streams, so the
    result does not depend on the number of threads.
    """
    sc = config.simulator
    seed = config.seed
    catalog = sim.generate_catalog(sc.n_genres, sc.items_per_genre, seed)
    users = sim.generate_users(sc.n_users, sc.n_genres, seed, sc.drift_rate)
    params = sc.decision_params
    obs_policy, intv_policy = sc.obs_policy.to_policy(), sc.intv_policy.to_policy()

    def one(user):
        return sim.simulate_users([user], params, catalog, obs_policy, intv_policy,
                                  sc.obs_length, sc.intv_length, seed)[0]

    threads = thread_count() if threads is None else threads
    if threads == 1:
        records = [one(u) for u in users]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, users))
    splits = sim.split_dataset(records, tuple(sc.split), seed)
    return catalog, records, splits


def gen_data(config: ExperimentConfig, out_dir, threads: Optional[int] = None) -> dict:
    catalog, records, splits = simulate(config, threads)
    manifest = storage.write_dataset(out_dir, catalog, records, splits, config.config_hash)
    storage.record_timestamp(out_dir, "gen-data", _now())
    return manifest


# --------------------------------------------------------------------------
# training


def train(mode: str, data_dir, config: ExperimentConfig, out_path, ftilde_path=None) -> Checkpoint:
    """Fit ``mode`` ("obs" or "csrec") on the training split; writes the checkpoint and its loss trace."""
    data = storage.read_dataset(data_dir)
    train_records = data.subset("train")
    n_items = len(data.catalog)
    if mode == "obs":
        hyper = config.model.hyperparams(config.seed)
        res = seqrec.train_observational([r.obs for r in train_records], hyper, n_items=n_items)
        ckpt = Checkpoint("ftilde", res.params, {**asdict(hyper), "n_items": n_items}, res.adam)
        trace = storage.loss_trace_csv(res.init_loss, res.loss_trace)
    elif mode == "csrec":
        if not ftilde_path:
            raise MissingFtilde("csrec training needs an observational checkpoint (--ftilde)")
        ftilde = storage.load_checkpoint(ftilde_path, role="ftilde")
        if ftilde.params.n_items != n_items:
            raise RoleMismatch(f"checkpoint covers {ftilde.params.n_items} items, dataset has {n_items}")
        hyper = config.model.csrec_hyper(config.seed)
        res = constrained.train_csrec([r.intv for r in train_records], ftilde.params, hyper)
        ckpt = Checkpoint("csrec", res.params, {**asdict(hyper), "n_items": n_items}, res.adam)
        trace = storage.loss_trace_csv(res.init_loss, res.loss_trace, res.residual_trace)
    else:
        raise ValueError(f"unknown training mode {mode!r}")
    storage.save_checkpoint(out_path, ckpt)
    storage.write_text(trace_path(out_path), trace)
    return ckpt


def trace_path(ckpt_path) -> str:
    root, _ = os.path.splitext(str(ckpt_path))
    return root + ".loss.csv"


# --------------------------------------------------------------------------
# evaluation


def _max_seq_len(ckpt: Checkpoint) -> int:
    return int(ckpt.hyperparams.get("max_seq_len", 50))


def evaluate(data_dir, ckpt_path, mode: str, ev: EvalConfig, seed: int = 0) -> metrics.EvalReport:
    """Observational ranking metrics (``mode="obs"``) or interventional decision metrics (``"intv"``).

    Interventional reports hold the ``beta``-step protocol plus the same
    metrics over every step (prefixed ``all/``).
    """
    data = storage.read_dataset(data_dir)
    ckpt_bytes = open(ckpt_path, "rb").read()
    ckpt = storage.load_checkpoint(ckpt_path)
    records = data.subset(ev.split)
    L = _max_seq_len(ckpt)
    if mode == "obs":
        report = metrics.ranking_eval(ckpt.params, [r.obs for r in records], ev.k, L)
    elif mode == "intv":
        kind = "csrec" if ckpt.role == "csrec" else "baseline"
        seqs = [r.intv for r in records]
        report = metrics.multi_step_eval(ckpt.params, seqs, ev.beta, ev.alpha, ev.mode, kind, L)
        full = metrics.multi_step_eval(ckpt.params, seqs, None, ev.alpha, metrics.TEACHER, kind, L)
        report.metrics.update({f"all/{k}": v for k, v in full.metrics.items()})
        report.metadata["kind"] = kind
    else:
        raise ValueError(f"unknown evaluation mode {mode!r}")
    report.metadata.update({
        "seed": seed,
        "role": ckpt.role,
        "eval_mode": mode,
        "split": ev.split,
        "dataset_hash": data.manifest.get("dataset_hash", ""),
        "checkpoint_hash": sha256_bytes(ckpt_bytes),
        "alpha": " ".join(f"{a:g}" for a in ev.alpha),
        "k": " ".join(str(k) for k in ev.k),
        "beta": ev.beta,
    })
    return report


def write_report(report: metrics.EvalReport, out_dir, name: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    csv_bytes = storage.write_text(os.path.join(out_dir, name + ".csv"), report.to_csv())
    md_bytes = storage.write_text(os.path.join(out_dir, name + ".md"), report.to_markdown())
    return {name + ".csv": sha256_bytes(csv_bytes), name + ".md": sha256_bytes(md_bytes)}


# --------------------------------------------------------------------------
# treatment effects


def ter_rows(data_dir, csrec_path, ftilde_path, items=None, context: str = "own", split: str = "test"):
    """Rows ``(user_id, item_id, f_intv, f_obs, ter)``.

    ``context`` picks the histories: ``own`` feeds each model its regime's
    sequence, ``intv`` / ``obs`` feed both models the same sequence.
    """
    if context not in ("own", "intv", "obs"):
        raise ValueError(f"unknown context {context!r}")
    data = storage.read_dataset(data_dir)
    f_ckpt = storage.load_checkpoint(csrec_path)
    g_ckpt = storage.load_checkpoint(ftilde_path, role="ftilde")
    items = list(range(len(data.catalog))) if items is None else [int(i) for i in items]
    L = _max_seq_len(f_ckpt)
    rows = []
    for r in data.subset(split):
        intv_ctx = r.obs if context == "obs" else r.intv
        obs_ctx = r.intv if context == "intv" else r.obs
        f_intv, f_obs = metrics.ter_components(f_ckpt.params, g_ckpt.params, items, intv_ctx, obs_ctx, L)
        for v, a, b in zip(items, f_intv, f_obs):
            rows.append((r.user_id, v, float(a), float(b), float(a - b)))
    return rows


# --------------------------------------------------------------------------
# end to end


def run_pipeline(config: ExperimentConfig, out_dir=None, threads: Optional[int] = None) -> dict:
    """gen-data -> f~ -> CSRec -> reports -> TER; returns the run manifest."""
    out_dir = out_dir or config.output_dir
    data_dir = os.path.join(out_dir, "data")
    os.makedirs(out_dir, exist_ok=True)
    dump_file(config.to_dict(), os.path.join(out_dir, "config.json"))
    manifest = gen_data(config, data_dir, threads)
    manifest["files"] = {f"data/{k}": v for k, v in manifest["files"].items()}

    ftilde_path = os.path.join(out_dir, "ftilde.json")
    csrec_path = os.path.join(out_dir, "csrec.json")
    for mode, path, role in (("obs", ftilde_path, "ftilde"), ("csrec", csrec_path, "csrec")):
        train(mode, data_dir, config, path, ftilde_path=ftilde_path)
        manifest["checkpoints"][role] = storage.sha256_file(path)
        manifest["files"][os.path.basename(trace_path(path))] = storage.sha256_file(trace_path(path))
        storage.record_timestamp(out_dir, f"train-{role}", _now())

    reports_dir = os.path.join(out_dir, "reports")
    for role, path in (("ftilde", ftilde_path), ("csrec", csrec_path)):
        for mode in ("obs", "intv"):
            report = evaluate(data_dir, path, mode, config.eval, config.seed)
            manifest["reports"].update(write_report(report, reports_dir, f"{role}_{mode}"))
    rows = ter_rows(data_dir, csrec_path, ftilde_path, split=config.eval.split)
    ter_bytes = storage.write_text(os.path.join(reports_dir, "ter.csv"), storage.ter_csv(rows))
    manifest["reports"]["ter.csv"] = sha256_bytes(ter_bytes)
    storage.write_manifest(out_dir, manifest)
    storage.record_timestamp(out_dir, "done", _now())
    return manifest


def summarize_ter(rows) -> dict:
    ter = np.array([r[4] for r in rows])
    return {"mean_ter": float(ter.mean()), "mean_abs_ter": float(np.abs(ter).mean()), "n": len(ter)}
