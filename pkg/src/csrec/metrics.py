"""Ranking and decision metrics, multi-step evaluation and treatment effects."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from . import seqrec
from .exceptions import EmptyInput, LengthMismatch, ParseError, SequenceTooShort, UnknownItem
from .serialization import FORMAT_VERSION
from .seqrec import SeqModelParams, _as_arrays

TEACHER = "teacher"
ROLLOUT = "rollout"
ROLLOUT_THRESHOLD = 0.5


def _check_rank_k(rank, k):
    if rank < 1 or k < 1:
        raise ValueError(f"rank and k must be >= 1, got rank={rank}, k={k}")


def hr_at_k(rank: int, k: int) -> int:
    _check_rank_k(rank, k)
    return int(rank <= k)


def ndcg_at_k(rank: int, k: int) -> float:
    """Single relevant item: ``1 / log2(rank + 1)`` inside the window, else 0."""
    _check_rank_k(rank, k)
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def rank_of(scores, candidate: int) -> int:
    """1-based rank of ``candidate`` under descending scores, ties broken by ascending id."""
    scores = np.asarray(scores, dtype=float)
    if not (0 <= candidate < len(scores)):
        raise UnknownItem(f"item {candidate!r} not in catalog of size {len(scores)}")
    s = scores[candidate]
    return 1 + int(np.count_nonzero(scores > s)) + int(np.count_nonzero(scores[:candidate] == s))


def ranking(scores) -> np.ndarray:
    """Item ids ordered by descending score, ties by ascending id."""
    scores = np.asarray(scores, dtype=float)
    return np.lexsort((np.arange(len(scores)), -scores))


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def _pair(z, d):
    z = np.asarray(z, dtype=float).ravel()
    d = np.asarray(d).ravel()
    if len(z) != len(d):
        raise LengthMismatch(f"{len(z)} predictions vs {len(d)} decisions")
    return z, d


def threshold_decisions(z, alpha: float) -> np.ndarray:
    _check_alpha(alpha)
    return (np.asarray(z, dtype=float) >= 1.0 - alpha).astype(np.int64)


def ahr_threshold(z, d, alpha: float) -> float:
    """Share of steps where ``z >= 1 - alpha`` agrees with the recorded decision."""
    z, d = _pair(z, d)
    if len(z) == 0:
        raise EmptyInput("no evaluation points")
    return float(np.mean(threshold_decisions(z, alpha) == d))


def topfrac_cutoff(n_items: int, alpha: float) -> int:
    _check_alpha(alpha)
    return math.ceil(alpha * n_items)


def ahr_topfrac(catalog_scores, candidate, d, alpha: float):
    """Top-fraction conversion of catalog scores into decisions.

    ``catalog_scores`` is one score vector (with a scalar ``candidate``) or a
    matrix with one row per evaluation point. Returns ``(d_hat, ahr)``.
    """
    scores = np.atleast_2d(np.asarray(catalog_scores, dtype=float))
    cand = np.atleast_1d(np.asarray(candidate))
    d = np.atleast_1d(np.asarray(d))
    if not (len(scores) == len(cand) == len(d)):
        raise LengthMismatch(f"{len(scores)} score rows, {len(cand)} candidates, {len(d)} decisions")
    if len(d) == 0:
        raise EmptyInput("no evaluation points")
    cutoff = topfrac_cutoff(scores.shape[1], alpha)
    d_hat = np.array([int(rank_of(s, int(c)) <= cutoff) for s, c in zip(scores, cand)], dtype=np.int64)
    return d_hat, float(np.mean(d_hat == d))


def bce_metric(z, d) -> float:
    z, d = _pair(z, d)
    if len(z) == 0:
        raise EmptyInput("no evaluation points")
    return float(np.mean(seqrec.bce(z, d.astype(float))))


# --------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    """Ordered metric values plus run metadata; CSV and markdown renderings."""

    metrics: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.metrics[name]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# format_version={FORMAT_VERSION}\n")
        for key in sorted(self.metadata):
            buf.write(f"# {key}={self.metadata[key]}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for name, value in self.metrics.items():
            w.writerow([name, format(float(value), ".17g")])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        metadata, rows, version = {}, [], None
        for lineno, line in enumerate(text.splitlines(), 1):
            if line.startswith("#"):
                key, sep, value = line[1:].strip().partition("=")
                if not sep:
                    raise ParseError("metadata line without '='", lineno, 1)
                if key == "format_version":
                    version = int(value)
                else:
                    metadata[key] = value
            elif line:
                rows.append((lineno, line))
        if version != FORMAT_VERSION:
            raise ParseError(f"unsupported format_version {version!r}", 1, 1)
        if not rows or rows[0][1] != "metric,value":
            raise ParseError("missing 'metric,value' header", rows[0][0] if rows else 1, 1)
        metrics = {}
        for lineno, (name, value) in zip((r[0] for r in rows[1:]), csv.reader(r[1] for r in rows[1:])):
            try:
                metrics[name] = float(value)
            except ValueError:
                raise ParseError(f"bad value {value!r}", lineno, len(name) + 2) from None
        return cls(metrics=metrics, metadata=metadata)

    def to_markdown(self) -> str:
        lines = ["| metric | value |", "|---|---|"]
        lines += [f"| {name} | {value:.4f} |" for name, value in self.metrics.items()]
        if self.metadata:
            lines.append("")
            lines += [f"- {k}: {self.metadata[k]}" for k in sorted(self.metadata)]
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# multi-step evaluation


def _eval_start(n: int, beta: Optional[int]) -> int:
    if beta is None:
        return 0
    if beta < 1:
        raise ValueError("beta must be >= 1")
    if n < beta:
        raise SequenceTooShort(f"sequence of length {n} has fewer than beta={beta} steps")
    return n - beta


def _rollout_csrec(model, it, de, start, max_seq_len):
    """Teacher-forced up to ``start``; afterwards the model's own thresholded decisions."""
    de = de.copy()
    z = np.empty(len(it) - start)
    for k in range(start, len(it)):
        p = seqrec.predict_histories(model, [(it[:k], de[:k])], [int(it[k])], max_seq_len)[0]
        z[k - start] = p
        de[k] = int(p >= ROLLOUT_THRESHOLD)
    return z


def csrec_predictions(model: SeqModelParams, sequences, beta=None, mode=TEACHER, max_seq_len=50):
    """Probabilities and recorded decisions at the evaluation steps of each sequence."""
    if mode not in (TEACHER, ROLLOUT):
        raise ValueError(f"unknown mode {mode!r}")
    arrays = [_as_arrays(s) for s in sequences]
    starts = [_eval_start(len(it), beta) for it, _ in arrays]
    if mode == TEACHER:
        flat = seqrec.predict_positions(model, arrays, max_seq_len)
        bounds = np.cumsum([len(it) for it, _ in arrays])[:-1]
        z = [f[s:] for f, s in zip(np.split(flat, bounds), starts)]
    else:
        z = [_rollout_csrec(model, it, de, s, max_seq_len) for (it, de), s in zip(arrays, starts)]
    d = [de[s:] for (_, de), s in zip(arrays, starts)]
    return np.concatenate(z), np.concatenate(d).astype(np.int64)


def accepted_history(items, decisions):
    """Baseline view of a history: accepted items only, all marked as accepted."""
    acc = np.asarray(items)[np.asarray(decisions) == 1]
    return acc, np.ones_like(acc)


def baseline_scores(model: SeqModelParams, sequences, beta=None, mode=TEACHER, max_seq_len=50):
    """Catalog score rows, candidates and decisions for the baseline conversion.

    Histories keep only accepted items. In rollout mode, decisions after the
    first evaluation step come from ``sigmoid(score) >= 0.5``.
    """
    if mode not in (TEACHER, ROLLOUT):
        raise ValueError(f"unknown mode {mode!r}")
    rows, cands, labels = [], [], []
    for seq in sequences:
        it, de = _as_arrays(seq)
        start = _eval_start(len(it), beta)
        if mode == TEACHER:
            hist = [accepted_history(it[:k], de[:k]) for k in range(start, len(it))]
            H = seqrec.encode_many(model, hist, max_seq_len)
            rows.append(H @ model.E_item.T + model.c)
        else:
            used = de.copy()
            for k in range(start, len(it)):
                s = seqrec.catalog_scores(model, seqrec.encode(model, accepted_history(it[:k], used[:k]), max_seq_len))
                rows.append(s[None, :])
                used[k] = int(expit(s[it[k]]) >= ROLLOUT_THRESHOLD)
        cands.append(it[start:])
        labels.append(de[start:])
    return np.concatenate(rows), np.concatenate(cands), np.concatenate(labels).astype(np.int64)


def multi_step_eval(
    model: SeqModelParams,
    sequences,
    beta: Optional[int] = 3,
    alphas: Sequence[float] = (0.2, 0.5),
    mode: str = TEACHER,
    kind: str = "csrec",
    max_seq_len: int = 50,
) -> EvalReport:
    """AHR and BCE over the last ``beta`` steps of each sequence (all steps if ``beta`` is None).

    ``kind="csrec"`` uses the probability threshold; ``kind="baseline"`` uses
    the top-fraction conversion and reports BCE on the hard decisions and on
    ``sigmoid(score)`` separately.
    """
    sequences = list(sequences)
    if not sequences:
        raise EmptyInput("no evaluation sequences")
    meta = {"beta": "all" if beta is None else beta, "mode": mode, "kind": kind}
    metrics = {}
    if kind == "csrec":
        z, d = csrec_predictions(model, sequences, beta, mode, max_seq_len)
        for a in alphas:
            metrics[f"AHR@{a:g}"] = ahr_threshold(z, d, a)
        metrics["BCE"] = bce_metric(z, d)
    elif kind == "baseline":
        S, cand, d = baseline_scores(model, sequences, beta, mode, max_seq_len)
        for a in alphas:
            d_hat, metrics[f"AHR@{a:g}"] = ahr_topfrac(S, cand, d, a)
            metrics[f"BCE_hard@{a:g}"] = bce_metric(d_hat, d)
        metrics["BCE_sigmoid"] = bce_metric(expit(S[np.arange(len(cand)), cand]), d)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    metrics["n_points"] = float(len(d))
    return EvalReport(metrics=metrics, metadata=meta)


def purchase_eval_points(sequences):
    """(history, target) pairs: the last accepted item given the earlier accepted ones."""
    points = []
    for seq in sequences:
        it, de = _as_arrays(seq)
        acc = it[de == 1]
        if len(acc) >= 2:
            points.append((acc[:-1], int(acc[-1])))
    return points


def ranking_eval(model: SeqModelParams, sequences, ks: Sequence[int] = (5, 10, 20), max_seq_len: int = 50) -> EvalReport:
    """HR@k and NDCG@k of next-purchase prediction on observational sequences."""
    points = purchase_eval_points(sequences)
    if not points:
        raise EmptyInput("no sequence has two or more accepted items")
    hist = [(h, np.ones_like(h)) for h, _ in points]
    S = seqrec.encode_many(model, hist, max_seq_len) @ model.E_item.T + model.c
    ranks = [rank_of(s, t) for s, (_, t) in zip(S, points)]
    metrics = {}
    for k in ks:
        metrics[f"HR@{k}"] = float(np.mean([hr_at_k(r, k) for r in ranks]))
        metrics[f"NDCG@{k}"] = float(np.mean([ndcg_at_k(r, k) for r in ranks]))
    metrics["n_points"] = float(len(ranks))
    return EvalReport(metrics=metrics, metadata={"kind": "ranking"})


def ter_components(csrec_model: SeqModelParams, ftilde: SeqModelParams, items, intv_context, obs_context, max_seq_len: int = 50):
    """``(f_intv, f_obs)`` for each item: interventional and observational acceptance."""
    items = [int(v) for v in items]
    for v in items:
        seqrec._check_candidate(csrec_model, v)
        seqrec._check_candidate(ftilde, v)
    idx = np.asarray(items, dtype=np.int64)
    f_intv = expit(seqrec.catalog_scores(csrec_model, seqrec.encode(csrec_model, intv_context, max_seq_len))[idx])
    f_obs = expit(seqrec.catalog_scores(ftilde, seqrec.encode(ftilde, obs_context, max_seq_len))[idx])
    return f_intv, f_obs


def ter_estimate(csrec_model: SeqModelParams, ftilde: SeqModelParams, items, intv_context, obs_context, max_seq_len: int = 50):
    """Treatment effect ``f(v | intv context) - ftilde(v | obs context)`` for each item ``v``."""
    f_intv, f_obs = ter_components(csrec_model, ftilde, items, intv_context, obs_context, max_seq_len)
    return f_intv - f_obs
