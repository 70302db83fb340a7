"""Input checks shared by the estimators and the command line."""
from __future__ import annotations

import numbers

import numpy as np

from .exceptions import EmptyData, UnknownItem
from .sim import EventSequence


def check_sequence(seq, n_items=None, allow_empty=False):
    """Return ``(items, decisions)`` int64 arrays after validating ``seq``.

    Accepts an :class:`EventSequence`, a list of ``(item, decision)`` pairs,
    or an ``(items, decisions)`` tuple of arrays.
    """
    if isinstance(seq, EventSequence):
        items, decs = seq.items, seq.decisions
    elif isinstance(seq, tuple) and len(seq) == 2 and all(isinstance(a, np.ndarray) for a in seq):
        items, decs = seq
    else:
        pairs = list(seq)
        if any(len(p) != 2 for p in pairs):
            raise ValueError("events must be (item, decision) pairs")
        items = np.array([p[0] for p in pairs])
        decs = np.array([p[1] for p in pairs])
    items = np.asarray(items)
    decs = np.asarray(decs)
    if items.shape != decs.shape or items.ndim != 1:
        raise ValueError(f"items {items.shape} and decisions {decs.shape} must be equal-length vectors")
    if len(items) == 0 and not allow_empty:
        raise EmptyData("empty sequence")
    if len(items) and not (np.issubdtype(items.dtype, np.integer) or np.all(items == np.round(items))):
        raise ValueError("item ids must be integers")
    items = items.astype(np.int64)
    if len(decs) and not np.isin(decs, (0, 1)).all():
        raise ValueError("decisions must be 0 or 1")
    if n_items is not None and len(items) and (items.min() < 0 or items.max() >= n_items):
        bad = int(items[(items < 0) | (items >= n_items)][0])
        raise UnknownItem(f"item {bad} not in catalog of size {n_items}")
    return items, decs.astype(np.int64)


def check_sequences(seqs, n_items=None, allow_empty=False):
    out = [check_sequence(s, n_items, allow_empty) for s in seqs]
    if not out:
        raise EmptyData("no sequences")
    return out


def check_items(items, n_items):
    items = np.asarray(list(items), dtype=np.int64)
    if len(items) and (items.min() < 0 or items.max() >= n_items):
        raise UnknownItem(f"item ids must lie in [0, {n_items})")
    return items


def check_scalar(x, name, *, lo=None, hi=None, lo_open=False, hi_open=False, integer=False):
    """Range-check a scalar, returning it unchanged."""
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(x, bool) or not isinstance(x, kind):
        raise TypeError(f"{name} must be {'an integer' if integer else 'a number'}, got {x!r}")
    if lo is not None and (x < lo or (lo_open and x == lo)):
        raise ValueError(f"{name}={x} below {'or equal to ' if lo_open else ''}{lo}")
    if hi is not None and (x > hi or (hi_open and x == hi)):
        raise ValueError(f"{name}={x} above {'or equal to ' if hi_open else ''}{hi}")
    return x
