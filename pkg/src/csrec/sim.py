"""Parametric user simulator.

Synthesizes a genre-structured catalog, users described by a preference
distribution over genres, and two kinds of interaction sequences that share
one decision mechanism:

* observational: the user picks what to look at (exposure biased towards
  popular items of preferred genres),
* interventional: a recommender decides the exposure, independently of the
  user's preferences.

Every random draw comes from a PCG64 stream keyed by ``(seed, stream tag,
user id)``, so outputs do not depend on generation order.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .exceptions import BadRatios, TooDeep, UnknownItem

OBSERVATIONAL = "observational"
INTERVENTIONAL = "interventional"

# stream tags keep the per-purpose generators independent
_TAG_CATALOG = 1
_TAG_USERS = 2
_TAG_OBS = 3
_TAG_INTV = 4
_TAG_SPLIT = 5
_TAG_DRIFT = 6

MAX_ENUMERATION_DEPTH = 16


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Return an independent generator for the stream ``(seed, *key)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, key)])))


def sigmoid(x):
    """Numerically stable logistic function (scalar or array)."""
    if np.isscalar(x):
        if x >= 0:
            return 1.0 / (1.0 + math.exp(-x))
        e = math.exp(x)
        return e / (1.0 + e)
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class Item:
    id: int
    genre: int
    popularity: float


@dataclass(frozen=True, eq=False)
class Catalog:
    """Items ``0..N-1`` with a genre index and a popularity weight each."""

    genres: np.ndarray
    popularity: np.ndarray
    n_genres: int

    def __post_init__(self):
        genres = np.asarray(self.genres, dtype=np.int64)
        popularity = np.asarray(self.popularity, dtype=float)
        if genres.shape != popularity.shape or genres.ndim != 1:
            raise ValueError("genres and popularity must be 1-d arrays of equal length")
        if len(genres) and (genres.min() < 0 or genres.max() >= self.n_genres):
            raise ValueError("item genre out of range")
        if np.any((popularity < 0) | (popularity > 1)):
            raise ValueError("popularity must lie in [0, 1]")
        object.__setattr__(self, "genres", genres)
        object.__setattr__(self, "popularity", popularity)

    def __len__(self):
        return len(self.genres)

    def __eq__(self, other):
        return (
            isinstance(other, Catalog)
            and self.n_genres == other.n_genres
            and np.array_equal(self.genres, other.genres)
            and np.array_equal(self.popularity, other.popularity)
        )

    @property
    def items(self) -> list[Item]:
        return [Item(i, int(g), float(p)) for i, (g, p) in enumerate(zip(self.genres, self.popularity))]

    def item(self, item_id) -> Item:
        self.check_item(item_id)
        i = int(item_id)
        return Item(i, int(self.genres[i]), float(self.popularity[i]))

    def check_item(self, item_id):
        if not (0 <= int(item_id) < len(self.genres)) or int(item_id) != item_id:
            raise UnknownItem(f"item {item_id!r} not in catalog of size {len(self.genres)}")


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    prefs: tuple
    drift_rate: float = 0.0

    def __post_init__(self):
        prefs = tuple(float(p) for p in self.prefs)
        if any(p < 0 for p in prefs) or abs(sum(prefs) - 1.0) > 1e-9:
            raise ValueError(f"prefs of user {self.user_id} are not a probability vector")
        if not 0.0 <= self.drift_rate < 1.0:
            raise ValueError("drift_rate must lie in [0, 1)")
        object.__setattr__(self, "prefs", prefs)


@dataclass(frozen=True)
class DecisionModelParams:
    """Weights of the logistic decision mechanism.

    ``P(accept) = sigmoid(w_p * pref[genre] + w_d * m + w_r * r + b)`` where
    ``m = 2 d_prev - 1`` (0 at the first step) and ``r`` flags a repeat of an
    already accepted item.
    """

    w_p: float = 4.0
    w_d: float = 0.8
    w_r: float = -3.0
    b: float = -2.0

    def __post_init__(self):
        for name in ("w_p", "w_d", "w_r", "b"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class ExposurePolicy:
    """How items get exposed.

    ``user-proposal`` draws ``i`` with weight ``popularity[i] * exp(kappa *
    pref[genre(i)])``; ``uniform`` and ``popularity`` ignore the user.
    ``weights`` overrides the popularity vector of the ``popularity`` policy.
    """

    kind: str = "user-proposal"
    kappa: float = 3.0
    weights: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("user-proposal", "uniform", "popularity"):
            raise ValueError(f"unknown exposure policy {self.kind!r}")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")


@dataclass(frozen=True)
class EventSequence:
    kind: str
    events: tuple

    def __post_init__(self):
        if self.kind not in (OBSERVATIONAL, INTERVENTIONAL):
            raise ValueError(f"unknown sequence kind {self.kind!r}")
        events = tuple((int(i), int(d)) for i, d in self.events)
        if not events:
            raise ValueError("an event sequence must not be empty")
        if any(d not in (0, 1) for _, d in events):
            raise ValueError("decisions must be 0 or 1")
        object.__setattr__(self, "events", events)

    def __len__(self):
        return len(self.events)

    @property
    def items(self) -> np.ndarray:
        return np.array([i for i, _ in self.events], dtype=np.int64)

    @property
    def decisions(self) -> np.ndarray:
        return np.array([d for _, d in self.events], dtype=np.int64)


@dataclass
class UserRecord:
    """One line of ``sequences.jsonl``."""

    user: UserProfile
    obs: EventSequence
    intv: EventSequence

    @property
    def user_id(self):
        return self.user.user_id


# --------------------------------------------------------------------------
# generators


def generate_catalog(n_genres: int, items_per_genre: int, seed: int) -> Catalog:
    if n_genres < 1 or items_per_genre < 1:
        raise ValueError("n_genres and items_per_genre must be >= 1")
    rng = make_rng(seed, _TAG_CATALOG)
    genres = np.repeat(np.arange(n_genres), items_per_genre)
    popularity = rng.random(n_genres * items_per_genre)
    return Catalog(genres=genres, popularity=popularity, n_genres=n_genres)


def _dirichlet_ones(rng, n):
    e = rng.standard_exponential(n)
    return e / e.sum()


def generate_user(user_id: int, n_genres: int, seed: int, drift_rate: float = 0.0) -> UserProfile:
    prefs = _dirichlet_ones(make_rng(seed, _TAG_USERS, user_id), n_genres)
    return UserProfile(user_id=user_id, prefs=tuple(prefs), drift_rate=drift_rate)


def generate_users(n_users: int, n_genres: int, seed: int, drift_rate: float = 0.0) -> list[UserProfile]:
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    return [generate_user(u, n_genres, seed, drift_rate) for u in range(n_users)]


# --------------------------------------------------------------------------
# decision mechanism


def _decision_logit(pref, params, prev_decision, repeat):
    m = 0.0 if prev_decision is None else 2.0 * prev_decision - 1.0
    return params.w_p * pref + params.w_d * m + params.w_r * (1.0 if repeat else 0.0) + params.b


def decision_prob(
    user: UserProfile,
    params: DecisionModelParams,
    item,
    prev_decision: Optional[int] = None,
    accepted_history: Iterable[int] = frozenset(),
    catalog: Optional[Catalog] = None,
    prefs: Optional[Sequence[float]] = None,
) -> float:
    """Probability that ``user`` accepts ``item``.

    ``item`` is an :class:`Item` or an item id (then ``catalog`` is required).
    ``prefs`` overrides the user's static preferences (used under drift).
    """
    if isinstance(item, Item):
        item_id, genre = item.id, item.genre
        if catalog is not None:
            catalog.check_item(item_id)
    else:
        if catalog is None:
            raise TypeError("an item id needs a catalog")
        item_id, genre = int(item), catalog.item(item).genre
    if prev_decision not in (None, 0, 1):
        raise ValueError("prev_decision must be None, 0 or 1")
    prefs = user.prefs if prefs is None else prefs
    repeat = item_id in accepted_history
    return sigmoid(_decision_logit(prefs[genre], params, prev_decision, repeat))


# --------------------------------------------------------------------------
# sequence simulation


def exposure_distribution(policy: ExposurePolicy, catalog: Catalog, prefs=None) -> np.ndarray:
    n = len(catalog)
    if policy.kind == "uniform":
        w = np.ones(n)
    elif policy.kind == "popularity":
        w = np.asarray(policy.weights if policy.weights is not None else catalog.popularity, dtype=float)
        if w.shape != (n,):
            raise ValueError("popularity weights must match the catalog size")
    else:
        if prefs is None:
            raise ValueError("the user-proposal policy needs preferences")
        w = catalog.popularity * np.exp(policy.kappa * np.asarray(prefs)[catalog.genres])
    total = w.sum()
    if not total > 0:
        raise ValueError("exposure weights sum to zero")
    return w / total


def _draw(cdf, u):
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)


def _simulate(user, params, catalog, policy, length, rng, kind, drift_rng=None, drift_period=10):
    if length < 1:
        raise ValueError("length must be >= 1")
    prefs = np.asarray(user.prefs)
    exposure_u = rng.random(length)
    decision_u = rng.random(length)
    cdf = np.cumsum(exposure_distribution(policy, catalog, prefs))
    events = []
    prev = None
    accepted = set()
    for t in range(length):
        if drift_rng is not None and t > 0 and t % drift_period == 0:
            prefs = (1 - user.drift_rate) * prefs + user.drift_rate * _dirichlet_ones(drift_rng, len(prefs))
            if policy.kind == "user-proposal":
                cdf = np.cumsum(exposure_distribution(policy, catalog, prefs))
        item = int(_draw(cdf, exposure_u[t]))
        genre = catalog.genres[item]
        p = sigmoid(_decision_logit(prefs[genre], params, prev, item in accepted))
        d = int(decision_u[t] < p)
        events.append((item, d))
        if d:
            accepted.add(item)
        prev = d
    return EventSequence(kind, tuple(events))


def simulate_observational(
    user: UserProfile,
    params: DecisionModelParams,
    catalog: Catalog,
    policy: ExposurePolicy,
    length: int,
    seed: int,
    drift_period: int = 10,
) -> EventSequence:
    """User-driven exposure followed by a decision at each step."""
    rng = make_rng(seed, _TAG_OBS, user.user_id)
    drift_rng = make_rng(seed, _TAG_DRIFT, _TAG_OBS, user.user_id) if user.drift_rate > 0 else None
    return _simulate(user, params, catalog, policy, length, rng, OBSERVATIONAL, drift_rng, drift_period)


def simulate_interventional(
    user: UserProfile,
    params: DecisionModelParams,
    catalog: Catalog,
    policy: ExposurePolicy,
    length: int,
    seed: int,
    drift_period: int = 10,
) -> EventSequence:
    """Recommender-driven exposure; the decision mechanism is unchanged."""
    if policy.kind == "user-proposal":
        raise ValueError("interventional exposure must not depend on the user (use uniform or popularity)")
    rng = make_rng(seed, _TAG_INTV, user.user_id)
    drift_rng = make_rng(seed, _TAG_DRIFT, _TAG_INTV, user.user_id) if user.drift_rate > 0 else None
    return _simulate(user, params, catalog, policy, length, rng, INTERVENTIONAL, drift_rng, drift_period)


# --------------------------------------------------------------------------
# exact interventional acceptance


def ground_truth_interventional_prob(
    user: UserProfile,
    params: DecisionModelParams,
    catalog: Catalog,
    s_values: Sequence[int],
    t: Optional[int] = None,
    method: str = "auto",
) -> float:
    """Exact ``P(D_t = 1 | do(S_1..S_t = s_values), prefs)``.

    With ``w_r == 0`` the previous decision is the only channel between steps
    and the acceptance marginal obeys a linear recursion. Otherwise (or with
    ``method="enumerate"``) all ``2**(t-1)`` decision histories are summed.
    """
    s_values = [int(s) for s in s_values]
    t = len(s_values) if t is None else t
    if t < 1 or t > len(s_values):
        raise ValueError("t must lie in 1..len(s_values)")
    s_values = s_values[:t]
    for s in s_values:
        catalog.check_item(s)
    if method == "auto":
        method = "recursion" if params.w_r == 0 else "enumerate"
    if method == "recursion":
        if params.w_r != 0:
            raise ValueError("the recursion is only exact when w_r == 0")
        return float(interventional_marginals(user, params, catalog, s_values)[-1])
    if method != "enumerate":
        raise ValueError(f"unknown method {method!r}")
    if t > MAX_ENUMERATION_DEPTH:
        raise TooDeep(f"t={t} exceeds the enumeration limit of {MAX_ENUMERATION_DEPTH}")
    return _enumerate_paths(user, params, catalog, s_values)


def interventional_marginals(user, params, catalog, s_values) -> np.ndarray:
    """``f_t`` for every prefix of ``s_values`` via the one-step recursion (``w_r == 0``)."""
    if params.w_r != 0:
        raise ValueError("the recursion is only exact when w_r == 0")
    out = np.empty(len(s_values))
    f = None
    for k, s in enumerate(s_values):
        item = catalog.item(s)
        if f is None:
            f = decision_prob(user, params, item, None)
        else:
            p1 = decision_prob(user, params, item, 1)
            p0 = decision_prob(user, params, item, 0)
            f = p1 * f + p0 * (1.0 - f)
        out[k] = f
    return out


def _enumerate_paths(user, params, catalog, s_values):
    items = [catalog.item(s) for s in s_values]
    total = 0.0
    for path in itertools.product((0, 1), repeat=len(items) - 1):
        weight = 1.0
        prev = None
        accepted = set()
        for item, d in zip(items[:-1], path):
            p = decision_prob(user, params, item, prev, accepted)
            weight *= p if d else 1.0 - p
            if d:
                accepted.add(item.id)
            prev = d
        total += weight * decision_prob(user, params, items[-1], prev, accepted)
    return total


# --------------------------------------------------------------------------
# dataset assembly


def simulate_users(users, params, catalog, obs_policy, intv_policy, obs_length, intv_length, seed):
    return [
        UserRecord(
            user=u,
            obs=simulate_observational(u, params, catalog, obs_policy, obs_length, seed),
            intv=simulate_interventional(u, params, catalog, intv_policy, intv_length, seed),
        )
        for u in users
    ]


def split_dataset(bundle, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> dict:
    """User-level train/valid/test split.

    ``bundle`` is a sequence of :class:`UserRecord` or of user ids. Split
    boundaries are ``round(cumulative_ratio * n_users)``.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9 or ratios[0] <= 0:
        raise BadRatios(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    ids = [r.user_id if isinstance(r, UserRecord) else int(r) for r in bundle]
    order = sorted(ids)
    perm = make_rng(seed, _TAG_SPLIT).permutation(len(order))
    shuffled = [order[i] for i in perm]
    n = len(shuffled)
    b1 = round(ratios[0] * n)
    b2 = round((ratios[0] + ratios[1]) * n)
    return {
        "train": sorted(shuffled[:b1]),
        "valid": sorted(shuffled[b1:b2]),
        "test": sorted(shuffled[b2:]),
    }
