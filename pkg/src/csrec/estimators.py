"""scikit-learn style wrappers around the observational and interventional models.

``X`` is a list of event sequences throughout (``EventSequence``, lists of
``(item, decision)`` pairs, or ``(items, decisions)`` array tuples).
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import constrained, metrics, seqrec
from .constrained import CsrecHyper
from .seqrec import Hyperparams, SeqModelParams
from .validation import check_items, check_scalar, check_sequence, check_sequences


class _SequenceModelMixin:
    """Prediction methods shared by both estimators; needs ``params_``."""

    def _hyper_kwargs(self):
        return dict(
            embed_dim=self.embed_dim, max_seq_len=self.max_seq_len, batch_size=self.batch_size,
            learning_rate=self.learning_rate, adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps, epochs=self.epochs, seed=self.seed,
        )

    def predict_proba(self, X):
        """Teacher-forced acceptance probability of every event, concatenated."""
        check_is_fitted(self, "params_")
        seqs = check_sequences(X, self.n_items_)
        return seqrec.predict_positions(self.params_, seqs, self.max_seq_len)

    def predict(self, X, threshold=0.5):
        return (self.predict_proba(X) >= threshold).astype(np.int64)

    def predict_sequence(self, seq):
        check_is_fitted(self, "params_")
        return constrained.predict_sequence(self.params_, check_sequence(seq, self.n_items_), self.max_seq_len)

    def score_catalog(self, history):
        """Logit of every catalog item after ``history``."""
        check_is_fitted(self, "params_")
        hist = check_sequence(history, self.n_items_, allow_empty=True)
        return seqrec.catalog_scores(self.params_, seqrec.encode(self.params_, hist, self.max_seq_len))

    def accept_proba(self, history, items=None):
        p = expit(self.score_catalog(history))
        return p if items is None else p[check_items(items, self.n_items_)]

    def rank_catalog(self, purchase_history):
        """Catalog ranking with every past purchase treated as accepted."""
        check_is_fitted(self, "params_")
        items = check_items(purchase_history, self.n_items_)
        return constrained.rank_catalog_observational(self.params_, items, self.max_seq_len)

    def score(self, X, y=None):
        """Negative mean BCE on the events of ``X`` (higher is better)."""
        seqs = check_sequences(X, getattr(self, "n_items_", None))
        labels = np.concatenate([d for _, d in seqs])
        return -metrics.bce_metric(self.predict_proba(seqs), labels)


class ObservationalRecommender(_SequenceModelMixin, BaseEstimator):
    """Acceptance model fit on observational (exposure, decision) sequences."""

    def __init__(self, n_items=None, embed_dim=64, max_seq_len=50, batch_size=256, learning_rate=0.0005,
                 adam_beta1=0.9, adam_beta2=0.999, adam_eps=1e-8, epochs=10, seed=0):
        self.n_items = n_items
        self.embed_dim = embed_dim
        self.max_seq_len = max_seq_len
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.epochs = epochs
        self.seed = seed

    def fit(self, X, y=None, callback=None):
        if self.n_items is not None:
            check_scalar(self.n_items, "n_items", lo=1, integer=True)
        seqs = check_sequences(X, self.n_items)
        n_items = self.n_items or int(max(it.max() for it, _ in seqs)) + 1
        hyper = Hyperparams(**self._hyper_kwargs())
        res = seqrec.train_observational(seqs, hyper, n_items=n_items, callback=callback)
        self.params_, self.n_items_ = res.params, n_items
        self.init_loss_, self.loss_trace_ = res.init_loss, res.loss_trace
        return self

    def branch_proba(self, intv_history, s_prev, s_t):
        """``(p_d1, p_d0)`` for ``s_t`` after ``s_prev`` was accepted / rejected."""
        check_is_fitted(self, "params_")
        hist = check_sequence(intv_history, self.n_items_, allow_empty=True)
        return seqrec.ftilde_branches(self.params_, hist, s_prev, s_t, self.max_seq_len)


class CSRecRecommender(_SequenceModelMixin, BaseEstimator):
    """Interventional acceptance model regularized toward the one-step recursion.

    ``ftilde`` is a fitted :class:`ObservationalRecommender` or raw
    :class:`SeqModelParams`; it is never modified.
    """

    def __init__(self, ftilde=None, lam=1.0, detach_target=True, init="ftilde", embed_dim=64, max_seq_len=50,
                 batch_size=256, learning_rate=0.0005, adam_beta1=0.9, adam_beta2=0.999, adam_eps=1e-8,
                 epochs=10, seed=0):
        self.ftilde = ftilde
        self.lam = lam
        self.detach_target = detach_target
        self.init = init
        self.embed_dim = embed_dim
        self.max_seq_len = max_seq_len
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.epochs = epochs
        self.seed = seed

    def _ftilde_params(self) -> SeqModelParams:
        if isinstance(self.ftilde, SeqModelParams):
            return self.ftilde
        if self.ftilde is None:
            raise ValueError("CSRecRecommender needs a fitted observational model")
        check_is_fitted(self.ftilde, "params_")
        return self.ftilde.params_

    def fit(self, X, y=None, callback=None):
        ft = self._ftilde_params()
        seqs = check_sequences(X, ft.n_items)
        hyper = CsrecHyper(**self._hyper_kwargs(), lam=self.lam, detach_target=self.detach_target, init=self.init)
        if hyper.init == "ftilde" and ft.embed_dim != hyper.embed_dim:
            raise ValueError(f"warm start needs embed_dim={ft.embed_dim}, got {hyper.embed_dim}")
        res = constrained.train_csrec(seqs, ft, hyper, callback=callback)
        self.params_, self.n_items_ = res.params, ft.n_items
        self.init_loss_, self.loss_trace_, self.residual_trace_ = res.init_loss, res.loss_trace, res.residual_trace
        return self

    def constraint_trace(self, seq):
        check_is_fitted(self, "params_")
        hyper = CsrecHyper(**self._hyper_kwargs(), lam=self.lam, detach_target=self.detach_target, init=self.init)
        return constrained.csrec_loss(self.params_, self._ftilde_params(), check_sequence(seq, self.n_items_), hyper)[2]
