"""Decision-conditioned GRU recommender with hand-written backprop and Adam.

Each history event ``(item, decision)`` enters the cell as
``x = E_item[item] + E_dec[decision]`` (row 0 of ``E_dec`` is *reject*, row 1
is *accept*). The cell is

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    h_hat = tanh(W_h x + U_h (r * h) + b_h)
    h <- (1 - z) * h + z * h_hat

starting from ``h = 0``, and a candidate ``j`` is accepted with probability
``sigmoid(h . E_item[j] + c[j])``. Histories longer than ``max_seq_len`` are
cut to their last ``max_seq_len`` events.

Computation is organised in *runs* (padded event sequences processed in
lock-step) and *queries* (read the state after ``pos`` events of a run and
score a candidate). Teacher-forced training on a whole sequence shares one
run between all its positions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit
from threadpoolctl import threadpool_limits

from .exceptions import EmptyData, ShapeMismatch, UnknownItem
from .sim import make_rng

PROB_CLIP = 1e-7
PARAM_NAMES = ("E_item", "E_dec", "W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h", "c")
_TAG_INIT = 11
_TAG_SHUFFLE = 12
_INFERENCE_CHUNK = 1024


@dataclass
class Hyperparams:
    embed_dim: int = 64
    max_seq_len: int = 50
    batch_size: int = 256
    learning_rate: float = 0.0005
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("embed_dim", "max_seq_len", "batch_size", "learning_rate", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")


@dataclass
class SeqModelParams:
    E_item: np.ndarray
    E_dec: np.ndarray
    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray
    c: np.ndarray

    @property
    def n_items(self) -> int:
        return self.E_item.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.E_item.shape[1]

    @classmethod
    def init(cls, n_items: int, embed_dim: int, seed: int = 0) -> "SeqModelParams":
        """Embeddings ~ N(0, 0.02^2), gate matrices Glorot-uniform, biases 0."""
        rng = make_rng(seed, _TAG_INIT)
        h = embed_dim
        bound = np.sqrt(6.0 / (h + h))
        return cls(
            E_item=rng.normal(0.0, 0.02, (n_items, h)),
            E_dec=rng.normal(0.0, 0.02, (2, h)),
            W_z=rng.uniform(-bound, bound, (h, h)),
            W_r=rng.uniform(-bound, bound, (h, h)),
            W_h=rng.uniform(-bound, bound, (h, h)),
            U_z=rng.uniform(-bound, bound, (h, h)),
            U_r=rng.uniform(-bound, bound, (h, h)),
            U_h=rng.uniform(-bound, bound, (h, h)),
            b_z=np.zeros(h),
            b_r=np.zeros(h),
            b_h=np.zeros(h),
            c=np.zeros(n_items),
        )

    @classmethod
    def zeros(cls, n_items: int, embed_dim: int) -> "SeqModelParams":
        h = embed_dim
        return cls(
            E_item=np.zeros((n_items, h)), E_dec=np.zeros((2, h)),
            W_z=np.zeros((h, h)), W_r=np.zeros((h, h)), W_h=np.zeros((h, h)),
            U_z=np.zeros((h, h)), U_r=np.zeros((h, h)), U_h=np.zeros((h, h)),
            b_z=np.zeros(h), b_r=np.zeros(h), b_h=np.zeros(h), c=np.zeros(n_items),
        )

    def zeros_like(self) -> "SeqModelParams":
        return SeqModelParams.zeros(self.n_items, self.embed_dim)

    def copy(self) -> "SeqModelParams":
        return SeqModelParams(**{k: v.copy() for k, v in self.as_dict().items()})

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def from_dict(cls, d) -> "SeqModelParams":
        params = cls(**{name: np.array(d[name], dtype=float) for name in PARAM_NAMES})
        params.check()
        return params

    def check(self):
        n, h = self.E_item.shape
        expected = {
            "E_item": (n, h), "E_dec": (2, h),
            "W_z": (h, h), "W_r": (h, h), "W_h": (h, h),
            "U_z": (h, h), "U_r": (h, h), "U_h": (h, h),
            "b_z": (h,), "b_r": (h,), "b_h": (h,), "c": (n,),
        }
        for name, shape in expected.items():
            value = getattr(self, name)
            if value.shape != shape:
                raise ShapeMismatch(f"{name} has shape {value.shape}, expected {shape}")
            if not np.all(np.isfinite(value)):
                raise ValueError(f"{name} contains non-finite values")

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, k).ravel() for k in PARAM_NAMES])


Gradients = SeqModelParams


@dataclass
class AdamState:
    m: SeqModelParams
    v: SeqModelParams
    step: int = 0

    @classmethod
    def zeros_for(cls, params: SeqModelParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0)


# --------------------------------------------------------------------------
# runs and queries


@dataclass
class Runs:
    """Padded event runs sorted by decreasing length, plus the queries on them."""

    items: np.ndarray
    decs: np.ndarray
    lengths: np.ndarray
    q_run: np.ndarray
    q_pos: np.ndarray
    q_item: np.ndarray

    @property
    def n_queries(self) -> int:
        return len(self.q_run)


def _as_arrays(history):
    if hasattr(history, "events"):
        history = history.events
    if isinstance(history, tuple) and len(history) == 2 and isinstance(history[0], np.ndarray):
        return history
    if len(history) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    arr = np.asarray(history, dtype=np.int64).reshape(-1, 2)
    return arr[:, 0].copy(), arr[:, 1].copy()


def _pack(run_items, run_decs, q_run, q_pos, q_item, n_items=None):
    lengths = np.array([len(r) for r in run_items], dtype=np.int64)
    order = np.argsort(-lengths, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    width = int(lengths.max()) if len(lengths) else 0
    items = np.zeros((len(order), width), dtype=np.int64)
    decs = np.zeros((len(order), width), dtype=np.int64)
    for new, old in enumerate(order):
        items[new, : lengths[old]] = run_items[old]
        decs[new, : lengths[old]] = run_decs[old]
    q_item = np.asarray(q_item, dtype=np.int64)
    if n_items is not None:
        _check_items(items, n_items)
        _check_items(q_item, n_items)
    return Runs(
        items=items,
        decs=decs,
        lengths=lengths[order],
        q_run=rank[np.asarray(q_run, dtype=np.int64)] if len(q_run) else np.zeros(0, dtype=np.int64),
        q_pos=np.asarray(q_pos, dtype=np.int64),
        q_item=q_item,
    )


def _check_items(items, n_items):
    if items.size and (items.min() < 0 or items.max() >= n_items):
        bad = items[(items < 0) | (items >= n_items)][0]
        raise UnknownItem(f"item {int(bad)} not in catalog of size {n_items}")


def runs_for_histories(histories, candidates, max_seq_len: int, n_items: Optional[int] = None) -> Runs:
    """One run per history (cut to its last ``max_seq_len`` events), one query each."""
    run_items, run_decs, q_pos = [], [], []
    for h in histories:
        it, de = _as_arrays(h)
        it, de = it[-max_seq_len:], de[-max_seq_len:]
        run_items.append(it)
        run_decs.append(de)
        q_pos.append(len(it))
    return _pack(run_items, run_decs, list(range(len(run_items))), q_pos, list(candidates), n_items)


def runs_for_sequences(sequences, max_seq_len: int, n_items: Optional[int] = None) -> Runs:
    """Teacher-forced queries for every position of every sequence.

    Query ``k`` of sequence ``s`` scores event ``k`` given events ``< k``.
    Queries are ordered sequence by sequence, position by position. Positions
    whose history fits in ``max_seq_len`` share one prefix run; later ones
    get their own window run.
    """
    run_items, run_decs, q_run, q_pos, q_item = [], [], [], [], []
    for seq in sequences:
        it, de = _as_arrays(seq)
        n = len(it)
        base = len(run_items)
        run_items.append(it[: min(n - 1, max_seq_len)])
        run_decs.append(de[: min(n - 1, max_seq_len)])
        for t in range(n):
            if t <= max_seq_len:
                q_run.append(base)
                q_pos.append(t)
            else:
                q_run.append(len(run_items))
                q_pos.append(max_seq_len)
                run_items.append(it[t - max_seq_len : t])
                run_decs.append(de[t - max_seq_len : t])
            q_item.append(it[t])
    return _pack(run_items, run_decs, q_run, q_pos, q_item, n_items)


# --------------------------------------------------------------------------
# forward / backward


@dataclass
class _Cache:
    runs: Runs
    x: list = field(default_factory=list)
    h_prev: list = field(default_factory=list)
    z: list = field(default_factory=list)
    r: list = field(default_factory=list)
    h_hat: list = field(default_factory=list)
    q_h: Optional[np.ndarray] = None


def _cell(params, x, h):
    H = h.shape[1]
    Wx = np.concatenate([params.W_z, params.W_r, params.W_h])
    bx = np.concatenate([params.b_z, params.b_r, params.b_h])
    ax = x @ Wx.T + bx
    azr = ax[:, : 2 * H] + h @ np.concatenate([params.U_z, params.U_r]).T
    z = expit(azr[:, :H])
    r = expit(azr[:, H:])
    h_hat = np.tanh(ax[:, 2 * H :] + (r * h) @ params.U_h.T)
    return (1.0 - z) * h + z * h_hat, z, r, h_hat


def _forward(params: SeqModelParams, runs: Runs, keep_cache: bool):
    R, L = runs.items.shape
    H = params.embed_dim
    h = np.zeros((R, H))
    q_h = np.zeros((runs.n_queries, H))
    by_pos = _queries_by_pos(runs, L)
    cache = _Cache(runs) if keep_cache else None
    for k in range(L):
        n = int(np.searchsorted(-runs.lengths, -k, side="left"))  # rows with length > k
        if n == 0:
            break
        x = params.E_item[runs.items[:n, k]] + params.E_dec[runs.decs[:n, k]]
        h_prev = h[:n]
        h_new, z, r, h_hat = _cell(params, x, h_prev)
        if keep_cache:
            cache.x.append(x)
            cache.h_prev.append(h_prev)
            cache.z.append(z)
            cache.r.append(r)
            cache.h_hat.append(h_hat)
        h = h_new if n == R else np.concatenate([h_new, h[n:]])
        idx = by_pos.get(k + 1)
        if idx is not None:
            q_h[idx] = h[runs.q_run[idx]]
    logits = np.einsum("qh,qh->q", q_h, params.E_item[runs.q_item]) + params.c[runs.q_item]
    if keep_cache:
        cache.q_h = q_h
    return logits, q_h, cache


def _queries_by_pos(runs, L):
    out = {}
    if runs.n_queries:
        order = np.argsort(runs.q_pos, kind="stable")
        pos = runs.q_pos[order]
        bounds = np.flatnonzero(np.diff(pos)) + 1
        for chunk in np.split(order, bounds):
            out[int(runs.q_pos[chunk[0]])] = chunk
    return out


def _backward(params: SeqModelParams, cache: _Cache, dlogits: np.ndarray) -> SeqModelParams:
    runs = cache.runs
    R, L = runs.items.shape
    H = params.embed_dim
    g = params.zeros_like()
    q_emb = params.E_item[runs.q_item]
    np.add.at(g.E_item, runs.q_item, dlogits[:, None] * cache.q_h)
    g.c += np.bincount(runs.q_item, weights=dlogits, minlength=params.n_items)
    dq_h = dlogits[:, None] * q_emb
    by_pos = _queries_by_pos(runs, L)

    Wx = np.concatenate([params.W_z, params.W_r, params.W_h])
    Uzr = np.concatenate([params.U_z, params.U_r])
    dWx = np.zeros_like(Wx)
    dbx = np.zeros(3 * H)
    dUzr = np.zeros_like(Uzr)
    dU_h = np.zeros_like(params.U_h)
    dh = np.zeros((R, H))
    dx_all = []
    for k in range(len(cache.x) - 1, -1, -1):
        idx = by_pos.get(k + 1)
        if idx is not None:
            np.add.at(dh, runs.q_run[idx], dq_h[idx])
        x, h_prev, z, r, h_hat = cache.x[k], cache.h_prev[k], cache.z[k], cache.r[k], cache.h_hat[k]
        n = x.shape[0]
        dh_new = dh[:n]
        dz = dh_new * (h_hat - h_prev)
        dh_prev = dh_new * (1.0 - z)
        da_h = dh_new * z * (1.0 - h_hat * h_hat)
        dU_h += da_h.T @ (r * h_prev)
        drh = da_h @ params.U_h
        dr = drh * h_prev
        dh_prev = dh_prev + drh * r
        da_zr = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=1)
        da = np.concatenate([da_zr, da_h], axis=1)
        dWx += da.T @ x
        dbx += da.sum(axis=0)
        dUzr += da_zr.T @ h_prev
        dh_prev = dh_prev + da_zr @ Uzr
        dx_all.append(da @ Wx)
        dh[:n] = dh_prev
    if dx_all:
        dx_all.reverse()
        flat_dx = np.concatenate(dx_all)
        flat_items = np.concatenate([runs.items[: len(d), k] for k, d in enumerate(dx_all)])
        flat_decs = np.concatenate([runs.decs[: len(d), k] for k, d in enumerate(dx_all)])
        np.add.at(g.E_item, flat_items, flat_dx)
        np.add.at(g.E_dec, flat_decs, flat_dx)
    g.W_z, g.W_r, g.W_h = dWx[:H], dWx[H : 2 * H], dWx[2 * H :]
    g.b_z, g.b_r, g.b_h = dbx[:H], dbx[H : 2 * H], dbx[2 * H :]
    g.U_z, g.U_r = dUzr[:H], dUzr[H:]
    g.U_h = dU_h
    return g


def run_logits(params: SeqModelParams, runs: Runs) -> np.ndarray:
    """Inference-only forward pass."""
    return _forward(params, runs, keep_cache=False)[0]


def run_states(params: SeqModelParams, runs: Runs) -> np.ndarray:
    """Hidden states read by each query."""
    return _forward(params, runs, keep_cache=False)[1]


# --------------------------------------------------------------------------
# public single-example operations


def _check_candidate(params, j):
    if not (0 <= int(j) < params.n_items) or int(j) != j:
        raise UnknownItem(f"item {j!r} not in catalog of size {params.n_items}")
    return int(j)


def encode(params: SeqModelParams, history, max_seq_len: int = 50) -> np.ndarray:
    """Final hidden state after feeding ``history`` (last ``max_seq_len`` events)."""
    runs = runs_for_histories([history], [0], max_seq_len, params.n_items)
    return run_states(params, runs)[0]


def encode_many(params: SeqModelParams, histories, max_seq_len: int = 50) -> np.ndarray:
    runs = runs_for_histories(histories, [0] * len(histories), max_seq_len, params.n_items)
    return run_states(params, runs)


def accept_prob(params: SeqModelParams, h: np.ndarray, candidate) -> float:
    j = _check_candidate(params, candidate)
    return float(expit(float(h @ params.E_item[j]) + params.c[j]))


def catalog_scores(params: SeqModelParams, h: np.ndarray) -> np.ndarray:
    """Logits of every catalog item; ``sigmoid`` of these are acceptance probabilities."""
    return params.E_item @ h + params.c


def bce(p, label):
    """Binary cross-entropy with probabilities clipped to ``[1e-7, 1 - 1e-7]``."""
    p = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    label = np.asarray(label, dtype=float)
    out = -(label * np.log(p) + (1.0 - label) * np.log1p(-p))
    return float(out) if np.ndim(out) == 0 else out


def bce_grad_logit(p, label):
    """d bce / d logit; zero where the clip is active."""
    p = np.asarray(p, dtype=float)
    inside = (p >= PROB_CLIP) & (p <= 1.0 - PROB_CLIP)
    return np.where(inside, p - np.asarray(label, dtype=float), 0.0)


def predict_runs(params: SeqModelParams, runs: Runs) -> np.ndarray:
    if runs.items.shape[0] <= _INFERENCE_CHUNK:
        return expit(run_logits(params, runs))
    return _predict_chunked(params, runs)


def _predict_chunked(params, runs):
    out = np.empty(runs.n_queries)
    for lo in range(0, runs.items.shape[0], _INFERENCE_CHUNK):
        hi = lo + _INFERENCE_CHUNK
        sel = np.flatnonzero((runs.q_run >= lo) & (runs.q_run < hi))
        width = int(runs.lengths[lo]) if lo < len(runs.lengths) else 0
        sub = Runs(
            items=runs.items[lo:hi, :width], decs=runs.decs[lo:hi, :width], lengths=runs.lengths[lo:hi],
            q_run=runs.q_run[sel] - lo, q_pos=runs.q_pos[sel], q_item=runs.q_item[sel],
        )
        out[sel] = expit(run_logits(params, sub))
    return out


def predict_histories(params: SeqModelParams, histories, candidates, max_seq_len: int = 50) -> np.ndarray:
    return predict_runs(params, runs_for_histories(histories, candidates, max_seq_len, params.n_items))


def predict_positions(params: SeqModelParams, sequences, max_seq_len: int = 50) -> np.ndarray:
    """Teacher-forced acceptance probability of every event (concatenated)."""
    return predict_runs(params, runs_for_sequences(sequences, max_seq_len, params.n_items))


# --------------------------------------------------------------------------
# loss, gradients, optimizer


def _labels_for_sequences(sequences):
    return np.concatenate([_as_arrays(s)[1] for s in sequences]).astype(float)


def loss_and_grads(params: SeqModelParams, runs: Runs, labels: np.ndarray):
    """Mean bce over the queries of ``runs`` and its exact gradient."""
    logits, _, cache = _forward(params, runs, keep_cache=True)
    p = expit(logits)
    loss = float(np.mean(bce(p, labels)))
    dlogits = bce_grad_logit(p, labels) / len(labels)
    return loss, _backward(params, cache, dlogits)


def backward(params: SeqModelParams, batch, max_seq_len: int = 50) -> Gradients:
    """Gradient of the mean bce over ``batch`` = [(history, candidate, label), ...]."""
    if len(batch) == 0:
        raise EmptyData("empty batch")
    histories, candidates, labels = zip(*batch)
    runs = runs_for_histories(histories, candidates, max_seq_len, params.n_items)
    return loss_and_grads(params, runs, np.asarray(labels, dtype=float))[1]


def batch_loss(params: SeqModelParams, batch, max_seq_len: int = 50) -> float:
    histories, candidates, labels = zip(*batch)
    p = predict_histories(params, histories, candidates, max_seq_len)
    return float(np.mean(bce(p, np.asarray(labels, dtype=float))))


def adam_step(params: SeqModelParams, grads: Gradients, state: AdamState, hyper: Hyperparams):
    """One Adam update with bias correction. Returns ``(new_params, new_state)``."""
    step = state.step + 1
    b1, b2 = hyper.adam_beta1, hyper.adam_beta2
    new_p, new_m, new_v = {}, {}, {}
    for name in PARAM_NAMES:
        p, g = getattr(params, name), getattr(grads, name)
        if p.shape != g.shape or getattr(state.m, name).shape != p.shape:
            raise ShapeMismatch(f"{name}: parameter {p.shape}, gradient {g.shape}")
        m = b1 * getattr(state.m, name) + (1.0 - b1) * g
        v = b2 * getattr(state.v, name) + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**step)
        v_hat = v / (1.0 - b2**step)
        new_p[name] = p - hyper.learning_rate * m_hat / (np.sqrt(v_hat) + hyper.adam_eps)
        new_m[name], new_v[name] = m, v
    return SeqModelParams(**new_p), AdamState(SeqModelParams(**new_m), SeqModelParams(**new_v), step)


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    params: SeqModelParams
    init_loss: float
    loss_trace: list
    residual_trace: list = field(default_factory=list)
    adam: Optional[AdamState] = None


def sequence_batches(lengths: Sequence[int], batch_size: int, seed: int, epoch: int, tag: int = _TAG_SHUFFLE):
    """Shuffle sequences and group them until each group holds ``>= batch_size`` events."""
    order = make_rng(seed, tag, epoch).permutation(len(lengths))
    batches, current, count = [], [], 0
    for i in order:
        current.append(int(i))
        count += lengths[i]
        if count >= batch_size:
            batches.append(current)
            current, count = [], 0
    if current:
        batches.append(current)
    return batches


def fit_adam(
    params: SeqModelParams,
    n_sequences: int,
    lengths: Sequence[int],
    hyper: Hyperparams,
    batch_fn: Callable,
    eval_fn: Callable,
    tag: int = _TAG_SHUFFLE,
    callback: Optional[Callable] = None,
):
    """Generic epoch loop: ``batch_fn(params, idx) -> (loss, grads)``, ``eval_fn(params) -> (loss, extra)``."""
    state = AdamState.zeros_for(params)
    init_loss, init_extra = eval_fn(params)
    losses, extras = [], []
    with threadpool_limits(1):
        for epoch in range(hyper.epochs):
            for idx in sequence_batches(lengths, hyper.batch_size, hyper.seed, epoch, tag):
                _, grads = batch_fn(params, idx)
                params, state = adam_step(params, grads, state, hyper)
            loss, extra = eval_fn(params)
            losses.append(loss)
            extras.append(extra)
            if callback is not None:
                callback(epoch + 1, loss, extra)
    return params, state, init_loss, init_extra, losses, extras


def dataset_loss(params: SeqModelParams, sequences, max_seq_len: int) -> float:
    p = predict_positions(params, sequences, max_seq_len)
    return float(np.mean(bce(p, _labels_for_sequences(sequences))))


def train_observational(
    data,
    hyper: Hyperparams,
    n_items: Optional[int] = None,
    init: Optional[SeqModelParams] = None,
    callback: Optional[Callable] = None,
) -> TrainResult:
    """Fit ``P(D_t = 1 | S_t, history)`` on observational sequences.

    Every position ``t`` of every sequence is a training example (history =
    events before ``t``, candidate = item exposed at ``t``, label = decision
    at ``t``). Minibatches are groups of whole sequences.
    """
    sequences = [_as_arrays(s) for s in data]
    if not sequences:
        raise EmptyData("no observational sequences")
    if n_items is None:
        n_items = int(max(s[0].max() for s in sequences)) + 1
    params = init.copy() if init is not None else SeqModelParams.init(n_items, hyper.embed_dim, hyper.seed)
    lengths = [len(s[0]) for s in sequences]

    def batch_fn(p, idx):
        chosen = [sequences[i] for i in idx]
        runs = runs_for_sequences(chosen, hyper.max_seq_len, n_items)
        return loss_and_grads(p, runs, _labels_for_sequences(chosen))

    def eval_fn(p):
        return dataset_loss(p, sequences, hyper.max_seq_len), None

    params, state, init_loss, _, losses, _ = fit_adam(
        params, len(sequences), lengths, hyper, batch_fn, eval_fn, callback=callback
    )
    return TrainResult(params=params, init_loss=init_loss, loss_trace=losses, adam=state)


def ftilde_branches(ftilde: SeqModelParams, intv_history, s_prev: int, s_t: int, max_seq_len: int = 50):
    """Acceptance of ``s_t`` after ``intv_history`` followed by ``s_prev`` accepted / rejected.

    Returns ``(p_d1, p_d0)``.
    """
    it, de = _as_arrays(intv_history)
    _check_candidate(ftilde, s_prev)
    _check_candidate(ftilde, s_t)
    h1 = (np.append(it, s_prev), np.append(de, 1))
    h0 = (np.append(it, s_prev), np.append(de, 0))
    p = predict_histories(ftilde, [h1, h0], [s_t, s_t], max_seq_len)
    return float(p[0]), float(p[1])


def branch_probs(ftilde: SeqModelParams, sequences, max_seq_len: int = 50):
    """``(p_d1, p_d0)`` arrays for every position of every sequence.

    Entry ``k`` of sequence ``s`` uses the history ``events[:k-1]`` plus
    ``(item[k-1], accept / reject)`` and candidate ``item[k]``; entries at
    ``k = 0`` are NaN.
    """
    histories, candidates, owners = [], [], []
    arrays = [_as_arrays(s) for s in sequences]
    for s, (it, de) in enumerate(arrays):
        for k in range(1, len(it)):
            for d in (1, 0):
                histories.append((np.append(it[: k - 1], it[k - 1]), np.append(de[: k - 1], d)))
                candidates.append(it[k])
    p = predict_histories(ftilde, histories, candidates, max_seq_len) if histories else np.zeros(0)
    out, pos = [], 0
    for it, _ in arrays:
        n = len(it)
        p1 = np.full(n, np.nan)
        p0 = np.full(n, np.nan)
        m = n - 1
        p1[1:] = p[pos : pos + 2 * m : 2]
        p0[1:] = p[pos + 1 : pos + 2 * m : 2]
        pos += 2 * m
        out.append((p1, p0))
    return out
