"""Interventional acceptance model trained under the one-step decomposition.

The model ``f`` shares the architecture of :mod:`csrec.seqrec`. On an
interventional sequence, ``f_t`` is the teacher-forced acceptance probability
of the recommended item ``s_t``. Training minimizes

    mean_t bce(f_t, d_t) + lam * mean_{t>=2} (f_t - target_t)^2
    target_t = p1_t * f_{t-1} + p0_t * (1 - f_{t-1})

where ``(p1_t, p0_t)`` is the frozen observational model's acceptance of
``s_t`` after ``s_{t-1}`` was accepted / rejected. With ``detach_target`` the
target is a constant; otherwise gradient also flows through ``f_{t-1}``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from . import seqrec
from .exceptions import EmptyData
from .seqrec import Hyperparams, SeqModelParams, TrainResult, _as_arrays

_TAG_CSREC_SHUFFLE = 13


@dataclass
class CsrecHyper(Hyperparams):
    lam: float = 1.0
    detach_target: bool = True
    init: str = "ftilde"  # "ftilde" warm-starts from the observational model, "random" does not

    def __post_init__(self):
        super().__post_init__()
        if not self.lam >= 0:
            raise ValueError("lam must be >= 0")
        if self.init not in ("ftilde", "random"):
            raise ValueError("init must be 'ftilde' or 'random'")

    @property
    def base(self) -> Hyperparams:
        return Hyperparams(**{k: getattr(self, k) for k in Hyperparams.__dataclass_fields__})


@dataclass
class ConstraintTrace:
    """Per-step predictions, targets and residuals of one sequence."""

    f: np.ndarray
    target: np.ndarray
    residual: np.ndarray

    @property
    def mean_squared_residual(self) -> float:
        r = self.residual[1:]
        return float(np.mean(r * r)) if len(r) else 0.0


def mix_branches(p_d1: float, p_d0: float, f_prev: float) -> float:
    """Convex combination of the two branch probabilities weighted by ``f_prev``."""
    return p_d1 * f_prev + p_d0 * (1.0 - f_prev)


def constraint_target(ftilde, intv_seq, t: int, f_prev: float, max_seq_len: int = 50) -> float:
    """Recursion target at 1-based step ``t >= 2``.

    ``ftilde`` is either a trained observational model or a callable
    ``(history, s_prev, s_t) -> (p_d1, p_d0)``; the latter lets exact
    simulator probabilities stand in for the learned ones.
    """
    if t < 2:
        raise ValueError("the constraint starts at t = 2")
    if not 0.0 <= f_prev <= 1.0:
        raise ValueError(f"f_prev must lie in [0, 1], got {f_prev}")
    it, de = _as_arrays(intv_seq)
    if t > len(it):
        raise ValueError(f"step {t} beyond sequence of length {len(it)}")
    history = (it[: t - 2], de[: t - 2])
    if isinstance(ftilde, SeqModelParams):
        p1, p0 = seqrec.ftilde_branches(ftilde, history, int(it[t - 2]), int(it[t - 1]), max_seq_len)
    else:
        p1, p0 = ftilde(history, int(it[t - 2]), int(it[t - 1]))
    return mix_branches(p1, p0, f_prev)


def predict_sequence(model: SeqModelParams, intv_seq, max_seq_len: int = 50) -> np.ndarray:
    """Teacher-forced ``f_t`` for every step of ``intv_seq``."""
    return seqrec.predict_positions(model, [intv_seq], max_seq_len)


def predict_sequences(model: SeqModelParams, seqs, max_seq_len: int = 50) -> list:
    seqs = list(seqs)
    flat = seqrec.predict_positions(model, seqs, max_seq_len)
    bounds = np.cumsum([len(_as_arrays(s)[0]) for s in seqs])[:-1]
    return np.split(flat, bounds)


def _loss_core(f, labels, p1, p0, owners, starts, lengths, lam, detach):
    """Batch loss (mean over sequences) and d loss / d logit.

    Arrays are concatenated over sequences; ``owners`` maps each step to its
    sequence, ``starts`` flags the first step of each sequence.
    """
    n_seq = len(lengths)
    per_step_bce = seqrec.bce(f, labels)
    bce_terms = np.array([np.mean(per_step_bce[a : a + n]) for a, n in zip(_offsets(lengths), lengths)])
    f_prev = np.concatenate([[0.0], f[:-1]])
    f_prev[starts] = 0.0
    target = p1 * f_prev + p0 * (1.0 - f_prev)
    target[starts] = np.nan
    residual = np.where(starts, 0.0, f - np.nan_to_num(target))
    denom = np.maximum(lengths - 1, 1).astype(float)
    pen_terms = np.bincount(owners, weights=residual * residual, minlength=n_seq) / denom
    seq_loss = bce_terms + lam * pen_terms if lam else bce_terms
    loss = float(np.mean(seq_loss))

    step_weight = 1.0 / (n_seq * lengths[owners])
    dlogit = seqrec.bce_grad_logit(f, labels) * step_weight
    if lam:
        dres = 2.0 * lam * residual / (n_seq * denom[owners])
        df = dres.copy()
        if not detach:
            # target_t depends on f_{t-1} with slope (p1_t - p0_t)
            back = -dres * np.nan_to_num(p1 - p0)
            back[starts] = 0.0
            df[:-1] += back[1:]
        dlogit = dlogit + df * f * (1.0 - f)
    return loss, dlogit, target, residual, seq_loss


def _offsets(lengths):
    return np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(int)


def _batch_arrays(seqs, branches):
    lengths = np.array([len(_as_arrays(s)[0]) for s in seqs])
    owners = np.repeat(np.arange(len(seqs)), lengths)
    starts = np.zeros(int(lengths.sum()), dtype=bool)
    starts[_offsets(lengths)] = True
    labels = np.concatenate([_as_arrays(s)[1] for s in seqs]).astype(float)
    p1 = np.concatenate([b[0] for b in branches])
    p0 = np.concatenate([b[1] for b in branches])
    return lengths, owners, starts, labels, p1, p0


def batch_loss_and_grads(model, seqs, branches, hyper: CsrecHyper, n_items=None):
    lengths, owners, starts, labels, p1, p0 = _batch_arrays(seqs, branches)
    runs = seqrec.runs_for_sequences(seqs, hyper.max_seq_len, n_items)
    logits, _, cache = seqrec._forward(model, runs, keep_cache=True)
    f = expit(logits)
    loss, dlogit, target, residual, _ = _loss_core(
        f, labels, p1, p0, owners, starts, lengths, hyper.lam, hyper.detach_target
    )
    grads = seqrec._backward(model, cache, dlogit)
    return loss, grads, (f, target, residual, lengths)


def csrec_loss(model: SeqModelParams, ftilde: SeqModelParams, intv_seq, hyper: CsrecHyper):
    """Loss, exact gradients and constraint trace for one interventional sequence."""
    branches = seqrec.branch_probs(ftilde, [intv_seq], hyper.max_seq_len)
    loss, grads, (f, target, residual, _) = batch_loss_and_grads(model, [intv_seq], branches, hyper, model.n_items)
    return loss, grads, ConstraintTrace(f=f, target=target, residual=residual)


def evaluate_constraint(model, seqs, branches, hyper: CsrecHyper):
    """Dataset loss and mean squared residual (over all steps t >= 2)."""
    lengths, owners, starts, labels, p1, p0 = _batch_arrays(seqs, branches)
    f = seqrec.predict_positions(model, seqs, hyper.max_seq_len)
    loss, _, _, residual, _ = _loss_core(f, labels, p1, p0, owners, starts, lengths, hyper.lam, True)
    r = residual[~starts]
    return loss, float(np.mean(r * r)) if len(r) else 0.0


def train_csrec(
    intv_data,
    ftilde: SeqModelParams,
    hyper: CsrecHyper,
    init: Optional[SeqModelParams] = None,
    callback: Optional[Callable] = None,
) -> TrainResult:
    """Adam on the constrained loss over interventional sequences."""
    seqs = [_as_arrays(s) for s in intv_data]
    if not seqs:
        raise EmptyData("no interventional sequences")
    n_items = ftilde.n_items
    if init is not None:
        model = init.copy()
    elif hyper.init == "ftilde":
        model = ftilde.copy()
    else:
        model = SeqModelParams.init(n_items, hyper.embed_dim, hyper.seed)
    branches = seqrec.branch_probs(ftilde, seqs, hyper.max_seq_len)
    lengths = [len(s[0]) for s in seqs]

    def batch_fn(p, idx):
        loss, grads, _ = batch_loss_and_grads(p, [seqs[i] for i in idx], [branches[i] for i in idx], hyper, n_items)
        return loss, grads

    def eval_fn(p):
        return evaluate_constraint(p, seqs, branches, hyper)

    model, state, init_loss, init_res, losses, residuals = seqrec.fit_adam(
        model, len(seqs), lengths, hyper.base, batch_fn, eval_fn, tag=_TAG_CSREC_SHUFFLE, callback=callback
    )
    return TrainResult(params=model, init_loss=init_loss, loss_trace=losses, residual_trace=residuals, adam=state)


def rank_catalog_observational(model: SeqModelParams, purchase_history: Sequence[int], max_seq_len: int = 50) -> list:
    """Rank the catalog treating every past purchase as an accepted recommendation."""
    items = np.asarray(list(purchase_history), dtype=np.int64)
    h = seqrec.encode(model, (items, np.ones_like(items)), max_seq_len)
    p = expit(seqrec.catalog_scores(model, h))
    return np.lexsort((np.arange(len(p)), -p)).tolist()
