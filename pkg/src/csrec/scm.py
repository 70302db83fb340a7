"""Exact inference on small discrete structural causal models.

Everything is computed by enumerating the full joint table, which makes the
module usable as an oracle: interventional queries mutilate the graph
(``do`` nodes lose their parents and get a point-mass CPT) and then condition
by summation. The state space is capped at ``MAX_STATES``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from . import serialization
from .exceptions import (
    BadCpt,
    CycleDetected,
    DisjointnessViolation,
    IncompleteAssignment,
    NonMarkovConfig,
    ParseError,
    TooLarge,
    UnknownNode,
    ZeroProbabilityEvidence,
)
from .sim import Catalog, DecisionModelParams, ExposurePolicy, UserProfile, decision_prob, exposure_distribution

MAX_STATES = 10**7
ROW_TOL = 1e-12

PLAIN = "plain"
REMOVE_IN_X = "remove-in(X)"
REMOVE_IN_X_OUT_Z = "remove-in(X)+remove-out(Z)"
REMOVE_IN_X_IN_ZW = "remove-in(X)+remove-in(Z(W))"
VARIANTS = (PLAIN, REMOVE_IN_X, REMOVE_IN_X_OUT_Z, REMOVE_IN_X_IN_ZW)
RULE_VARIANT = {1: REMOVE_IN_X, 2: REMOVE_IN_X_OUT_Z, 3: REMOVE_IN_X_IN_ZW}


@dataclass(frozen=True, eq=False)
class NodeSpec:
    """A variable with ``domain_size`` values and its CPT.

    ``cpt`` has shape ``(*parent_domain_sizes, domain_size)``: one probability
    row per joint parent assignment, parents in the order of ``parents``.
    """

    name: str
    domain_size: int
    parents: tuple = ()
    cpt: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "cpt", np.asarray(self.cpt, dtype=float))
        if self.domain_size < 1:
            raise ValueError(f"{self.name}: domain_size must be positive")
        if self.cpt.shape[-1:] != (self.domain_size,) or self.cpt.ndim != len(self.parents) + 1:
            raise ValueError(f"{self.name}: CPT shape {self.cpt.shape} does not match parents/domain")

    @property
    def rows(self) -> np.ndarray:
        return self.cpt.reshape(-1, self.domain_size)


class Scm:
    """Immutable discrete SCM: an ordered list of :class:`NodeSpec`."""

    def __init__(self, nodes: Sequence[NodeSpec]):
        self.nodes = tuple(nodes)
        self.index = {n.name: k for k, n in enumerate(self.nodes)}
        if len(self.index) != len(self.nodes):
            raise ValueError("node names must be unique")
        for n in self.nodes:
            for p in n.parents:
                if p not in self.index:
                    raise UnknownNode(f"{n.name}: unknown parent {p!r}")
                expected = self.nodes[self.index[p]].domain_size
                if n.cpt.shape[n.parents.index(p)] != expected:
                    raise ValueError(f"{n.name}: CPT axis for {p!r} has wrong size")

    def __repr__(self):
        return "Scm(" + ", ".join(f"{n.name}|{','.join(n.parents)}" for n in self.nodes) + ")"

    @property
    def names(self) -> tuple:
        return tuple(n.name for n in self.nodes)

    @property
    def parents(self) -> dict:
        return {n.name: n.parents for n in self.nodes}

    def node(self, name) -> NodeSpec:
        try:
            return self.nodes[self.index[name]]
        except KeyError:
            raise UnknownNode(f"unknown node {name!r}") from None

    def domain_sizes(self) -> tuple:
        return tuple(n.domain_size for n in self.nodes)

    def n_states(self) -> int:
        return int(np.prod(self.domain_sizes(), dtype=object))


@dataclass(frozen=True, eq=False)
class DistributionTable:
    """``probs[i, j, ...]`` = probability of ``targets`` taking values ``(i, j, ...)``."""

    targets: tuple
    probs: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return self.probs.reshape(-1)

    def __getitem__(self, key):
        return self.probs[key]


@dataclass(frozen=True)
class DocalcCheck:
    applicable: bool
    max_abs_diff: float
    n_points: int


# --------------------------------------------------------------------------
# structure


def topological_order(parents: Mapping[str, Sequence[str]]) -> list:
    """Kahn's algorithm; raises :class:`CycleDetected` naming one cycle edge."""
    indegree = {v: len(ps) for v, ps in parents.items()}
    children = {v: [] for v in parents}
    for v, ps in parents.items():
        for p in ps:
            children[p].append(v)
    ready = [v for v in parents if indegree[v] == 0]
    order = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        for c in children[v]:
            indegree[c] -= 1
            if indegree[c] == 0:
                ready.append(c)
    if len(order) < len(parents):
        raise CycleDetected(_find_cycle_edge(parents, set(parents) - set(order)))
    return order


def _find_cycle_edge(parents, remaining):
    # every remaining node has a remaining parent; walk parents until a repeat
    v = min(remaining)
    seen = []
    while v not in seen:
        seen.append(v)
        v = next(p for p in parents[v] if p in remaining)
    cycle = seen[seen.index(v):]
    # cycle lists child -> parent steps; report the first edge parent -> child
    return (cycle[1] if len(cycle) > 1 else cycle[0], cycle[0])


def validate_scm(scm: Scm) -> list:
    """Check acyclicity and CPT normalization; return a topological order."""
    order = topological_order(scm.parents)
    for n in scm.nodes:
        rows = n.rows
        if np.any(rows < 0) or np.any(rows > 1) or not np.all(np.isfinite(rows)):
            bad = int(np.argmax(np.any((rows < 0) | (rows > 1) | ~np.isfinite(rows), axis=1)))
            raise BadCpt(n.name, bad, float(rows[bad].sum()))
        sums = rows.sum(axis=1)
        off = np.abs(sums - 1.0) > ROW_TOL
        if np.any(off):
            bad = int(np.argmax(off))
            raise BadCpt(n.name, bad, float(sums[bad]))
    return order


# --------------------------------------------------------------------------
# probabilities


def joint_probability(scm: Scm, a: Mapping[str, int]) -> float:
    """Product of CPT entries for a full assignment."""
    missing = [n.name for n in scm.nodes if n.name not in a]
    if missing:
        raise IncompleteAssignment(f"assignment misses {missing}")
    p = 1.0
    for n in scm.nodes:
        _check_value(scm, n.name, a[n.name])
        p *= float(n.cpt[tuple(int(a[q]) for q in n.parents) + (int(a[n.name]),)])
    return p


def _check_value(scm, name, value):
    size = scm.node(name).domain_size
    if not 0 <= int(value) < size:
        raise ValueError(f"value {value} out of range for {name} (domain size {size})")


def joint_table(scm: Scm) -> np.ndarray:
    """Full joint distribution, one axis per node in ``scm.nodes`` order."""
    sizes = scm.domain_sizes()
    if scm.n_states() > MAX_STATES:
        raise TooLarge(f"{scm.n_states()} joint states exceed the cap of {MAX_STATES}")
    joint = np.ones(sizes)
    for n in scm.nodes:
        axes = [scm.index[p] for p in n.parents] + [scm.index[n.name]]
        order = np.argsort(axes)
        factor = np.transpose(n.cpt, order)
        shape = [1] * len(sizes)
        for ax in axes:
            shape[ax] = sizes[ax]
        joint = joint * factor.reshape(shape)
    return joint


def mutilate(scm: Scm, dos: Mapping[str, int]) -> Scm:
    """Graph surgery: each ``do`` node loses its parents and becomes a point mass."""
    nodes = []
    for n in scm.nodes:
        if n.name in dos:
            _check_value(scm, n.name, dos[n.name])
            cpt = np.zeros(n.domain_size)
            cpt[int(dos[n.name])] = 1.0
            nodes.append(NodeSpec(n.name, n.domain_size, (), cpt))
        else:
            nodes.append(n)
    return Scm(nodes)


def query(
    scm: Scm,
    target: Union[str, Iterable[str]],
    given: Optional[Mapping[str, int]] = None,
    dos: Optional[Mapping[str, int]] = None,
) -> DistributionTable:
    """``P(target | given, do(dos))`` by exact enumeration."""
    targets = (target,) if isinstance(target, str) else tuple(target)
    given = dict(given or {})
    dos = dict(dos or {})
    for name in (*targets, *given, *dos):
        scm.node(name)
    if len(set(targets)) != len(targets) or set(targets) & set(given) or set(targets) & set(dos) or set(given) & set(dos):
        raise DisjointnessViolation("target, given and do sets must be pairwise disjoint")
    model = mutilate(scm, dos) if dos else scm
    joint = joint_table(model)
    index = [slice(None)] * len(scm.nodes)
    for name, value in given.items():
        _check_value(scm, name, value)
        index[scm.index[name]] = slice(int(value), int(value) + 1)
    sub = joint[tuple(index)]
    keep = [scm.index[t] for t in targets]
    other = tuple(ax for ax in range(len(scm.nodes)) if ax not in keep)
    marg = sub.sum(axis=other)
    # sum() keeps the surviving axes in increasing order; reorder to ``targets``
    marg = np.transpose(marg, np.argsort(np.argsort(keep)))
    total = marg.sum()
    if not total > 0:
        raise ZeroProbabilityEvidence(f"P({given}) = 0 under do({dos})")
    return DistributionTable(targets, marg / total)


# --------------------------------------------------------------------------
# d-separation


def _parent_map(graph) -> dict:
    if isinstance(graph, Scm):
        return {k: tuple(v) for k, v in graph.parents.items()}
    return {k: tuple(v) for k, v in graph.items()}


def _ancestors(parents, nodes) -> set:
    out = set()
    stack = list(nodes)
    while stack:
        v = stack.pop()
        if v not in out:
            out.add(v)
            stack.extend(parents[v])
    return out


def remove_edges(parents, remove_in=(), remove_out=()) -> dict:
    remove_in, remove_out = set(remove_in), set(remove_out)
    return {
        v: tuple(p for p in ps if p not in remove_out) if v not in remove_in else ()
        for v, ps in parents.items()
    }


def mutilated_graph(graph, variant: str, x=(), z=(), w=()) -> dict:
    """Parent map of the graph the do-calculus rule ``variant`` tests on."""
    parents = _parent_map(graph)
    x, z, w = set(x), set(z), set(w)
    if variant == PLAIN:
        return parents
    if variant == REMOVE_IN_X:
        return remove_edges(parents, remove_in=x)
    if variant == REMOVE_IN_X_OUT_Z:
        return remove_edges(parents, remove_in=x, remove_out=z)
    if variant == REMOVE_IN_X_IN_ZW:
        g = remove_edges(parents, remove_in=x)
        z_w = z - _ancestors(g, w)
        return remove_edges(g, remove_in=x | z_w)
    raise ValueError(f"unknown variant {variant!r}")


def _reachable(parents, sources, given) -> set:
    """Nodes reachable from ``sources`` along active trails given ``given``."""
    children = {v: [] for v in parents}
    for v, ps in parents.items():
        for p in ps:
            children[p].append(v)
    anc_given = _ancestors(parents, given)
    visited = set()
    reachable = set()
    # direction "up": arrived from a child; "down": arrived from a parent
    frontier = [(s, "up") for s in sources]
    while frontier:
        v, direction = frontier.pop()
        if (v, direction) in visited:
            continue
        visited.add((v, direction))
        if v not in given:
            reachable.add(v)
        if direction == "up" and v not in given:
            frontier.extend((p, "up") for p in parents[v])
            frontier.extend((c, "down") for c in children[v])
        elif direction == "down":
            if v not in given:
                frontier.extend((c, "down") for c in children[v])
            if v in anc_given:
                frontier.extend((p, "up") for p in parents[v])
    return reachable


def d_separated(graph, y, z, w=(), variant: str = PLAIN, x=()) -> bool:
    """Is ``(Y _||_ Z | X, W)`` in the graph mutilated according to ``variant``?

    ``graph`` is an :class:`Scm` or a ``{node: parents}`` mapping. With the
    default ``x=()`` and ``variant="plain"`` this is ordinary d-separation of
    ``y`` and ``z`` given ``w``.
    """
    parents = _parent_map(graph)
    y, z, w, x = set(y), set(z), set(w), set(x)
    for v in y | z | w | x:
        if v not in parents:
            raise UnknownNode(f"unknown node {v!r}")
    if y & z or (y | z) & (w | x):
        raise DisjointnessViolation("Y, Z and the conditioning set must be disjoint")
    g = mutilated_graph(parents, variant, x=x, z=z, w=w)
    return not (_reachable(g, y, w | x) & z)


# --------------------------------------------------------------------------
# do-calculus


def check_docalc_rule(scm: Scm, rule: int, x=(), y=(), z=(), w=(), grid=None) -> DocalcCheck:
    """Evaluate one do-calculus rule numerically.

    ``applicable`` is the rule's d-separation precondition. ``max_abs_diff``
    is the largest gap between the two sides over ``grid`` (assignments of
    X, Z and W; all combinations by default). Points whose conditioning event
    has probability zero on either side are skipped.
    """
    if rule not in RULE_VARIANT:
        raise ValueError("rule must be 1, 2 or 3")
    x, y, z, w = (tuple(s) for s in (x, y, z, w))
    if set(x) & set(y) or set(x) & set(z) or set(x) & set(w) or set(y) & set(z) or set(y) & set(w) or set(z) & set(w):
        raise DisjointnessViolation("X, Y, Z, W must be pairwise disjoint")
    applicable = d_separated(scm, y, z, w, variant=RULE_VARIANT[rule], x=x)
    if grid is None:
        free = x + z + w
        grid = (
            dict(zip(free, values))
            for values in itertools.product(*(range(scm.node(v).domain_size) for v in free))
        )
    worst = 0.0
    n_points = 0
    for point in grid:
        xv = {v: point[v] for v in x}
        zv = {v: point[v] for v in z}
        wv = {v: point[v] for v in w}
        try:
            if rule == 1:
                lhs = query(scm, y, {**zv, **wv}, xv)
                rhs = query(scm, y, wv, xv)
            elif rule == 2:
                lhs = query(scm, y, wv, {**xv, **zv})
                rhs = query(scm, y, {**zv, **wv}, xv)
            else:
                lhs = query(scm, y, wv, {**xv, **zv})
                rhs = query(scm, y, wv, xv)
        except ZeroProbabilityEvidence:
            continue
        n_points += 1
        worst = max(worst, float(np.max(np.abs(lhs.probs - rhs.probs))))
    return DocalcCheck(bool(applicable), worst, n_points)


# --------------------------------------------------------------------------
# the recommendation graph


def s_node(t: int) -> str:
    return f"S_{t}"


def d_node(t: int) -> str:
    return f"D_{t}"


def build_recsys_scm(
    T: int,
    params: DecisionModelParams,
    users: Union[UserProfile, Sequence[UserProfile]],
    catalog: Catalog,
    exposure_cpts=None,
    p_prior=None,
    policy: ExposurePolicy = ExposurePolicy(),
) -> Scm:
    """SCM with nodes ``P, S_1, D_1, ..., S_T, D_T``.

    ``P`` indexes ``users`` (prior ``p_prior``, uniform by default). Edges:
    ``P -> S_t``, ``P -> D_t``, ``S_t -> D_t``, ``D_{t-1} -> D_t``. Decision CPTs
    come from :func:`csrec.sim.decision_prob`. ``exposure_cpts`` is an
    ``(n_users, N)`` array of ``P(S_t | P)`` (or a length-``T`` list of them);
    the default is the user-proposal distribution of ``policy``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if params.w_r != 0:
        raise NonMarkovConfig("the repeat term makes D_t depend on the whole history; set w_r = 0")
    users = [users] if isinstance(users, UserProfile) else list(users)
    n_p, n_items = len(users), len(catalog)
    states = n_p * (n_items * 2) ** T
    if states > MAX_STATES:
        raise TooLarge(f"{states} joint states exceed the cap of {MAX_STATES}")
    prior = np.full(n_p, 1.0 / n_p) if p_prior is None else np.asarray(p_prior, dtype=float)
    if exposure_cpts is None:
        exposure = np.array([exposure_distribution(policy, catalog, u.prefs) for u in users])
        exposure_cpts = [exposure] * T
    elif np.ndim(exposure_cpts) == 2:
        exposure_cpts = [np.asarray(exposure_cpts, dtype=float)] * T
    items = catalog.items
    nodes = [NodeSpec("P", n_p, (), prior)]
    for t in range(1, T + 1):
        nodes.append(NodeSpec(s_node(t), n_items, ("P",), np.asarray(exposure_cpts[t - 1], dtype=float)))
        if t == 1:
            cpt = np.empty((n_p, n_items, 2))
            for a, u in enumerate(users):
                for i, item in enumerate(items):
                    p = decision_prob(u, params, item, None)
                    cpt[a, i] = (1.0 - p, p)
            nodes.append(NodeSpec(d_node(t), 2, ("P", s_node(t)), cpt))
        else:
            cpt = np.empty((n_p, n_items, 2, 2))
            for a, u in enumerate(users):
                for i, item in enumerate(items):
                    for prev in (0, 1):
                        p = decision_prob(u, params, item, prev)
                        cpt[a, i, prev] = (1.0 - p, p)
            nodes.append(NodeSpec(d_node(t), 2, ("P", s_node(t), d_node(t - 1)), cpt))
    scm = Scm(nodes)
    validate_scm(scm)
    return scm


def verify_theorem1(scm: Scm, t: int, s_values: Sequence[int], p_value: int) -> float:
    """Max gap between ``P(D_t | do(S_1..S_t), P)`` and its one-step decomposition.

    The decomposition sums ``P(D_t | S_t, D_{t-1}, P)`` (observational, on the
    unmutilated model) weighted by ``P(D_{t-1} | do(S_1..S_{t-1}), P)``. At
    ``t = 1`` it is the plain conditional ``P(D_1 | S_1, P)``.
    """
    if t < 1 or s_node(t) not in scm.index:
        raise ValueError(f"t={t} outside the model")
    s_values = [int(s) for s in s_values]
    dos = {s_node(k): s_values[k - 1] for k in range(1, t + 1)}
    lhs = query(scm, d_node(t), {"P": p_value}, dos).probs
    if t == 1:
        rhs = query(scm, d_node(1), {"P": p_value, s_node(1): s_values[0]}).probs
    else:
        prev = query(scm, d_node(t - 1), {"P": p_value}, {k: v for k, v in dos.items() if k != s_node(t)}).probs
        rhs = np.zeros(2)
        for d in (0, 1):
            cond = query(scm, d_node(t), {"P": p_value, s_node(t): s_values[t - 1], d_node(t - 1): d}).probs
            rhs += cond * prev[d]
    return float(np.max(np.abs(lhs - rhs)))


# --------------------------------------------------------------------------
# text format


def scm_to_dict(scm: Scm) -> dict:
    order = validate_scm(scm)
    return {
        "format_version": serialization.FORMAT_VERSION,
        "kind": "scm",
        "nodes": [
            {
                "name": n.name,
                "domain_size": n.domain_size,
                "parents": list(n.parents),
                "cpt": n.rows.tolist(),
            }
            for n in (scm.node(v) for v in order)
        ],
    }


def scm_from_dict(data: Mapping) -> Scm:
    if data.get("format_version") != serialization.FORMAT_VERSION or data.get("kind") != "scm":
        raise ParseError("not a version-1 SCM file")
    nodes = []
    sizes = {}
    for entry in data["nodes"]:
        for p in entry["parents"]:
            if p not in sizes:
                raise ParseError(f"node {entry['name']!r} listed before its parent {p!r}")
        shape = tuple(sizes[p] for p in entry["parents"]) + (entry["domain_size"],)
        cpt = np.asarray(entry["cpt"], dtype=float).reshape(shape)
        nodes.append(NodeSpec(entry["name"], int(entry["domain_size"]), tuple(entry["parents"]), cpt))
        sizes[entry["name"]] = int(entry["domain_size"])
    scm = Scm(nodes)
    validate_scm(scm)
    return scm


def save_scm(scm: Scm, path) -> None:
    serialization.dump_file(scm_to_dict(scm), path)


def load_scm(path) -> Scm:
    return scm_from_dict(serialization.load_file(path))


def random_cpts(parents: Mapping[str, Sequence[str]], domain_sizes: Mapping[str, int], rng, concentration=1.0) -> Scm:
    """SCM over the given DAG with Dirichlet-distributed CPT rows."""
    nodes = []
    for v in topological_order(parents):
        shape = tuple(domain_sizes[p] for p in parents[v])
        rows = rng.dirichlet(np.full(domain_sizes[v], concentration), size=int(np.prod(shape, dtype=int)))
        nodes.append(NodeSpec(v, domain_sizes[v], tuple(parents[v]), rows.reshape(shape + (domain_sizes[v],))))
    return Scm(nodes)
