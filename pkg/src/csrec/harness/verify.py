"""Self-checks runnable from the command line (``csrec verify --suite ...``).

Each suite compares two independent routes to the same quantity and reports
the worst discrepancy against a fixed tolerance. Seeds are fixed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .. import constrained, metrics, scm, seqrec, sim
from ..constrained import CsrecHyper
from ..seqrec import PARAM_NAMES, SeqModelParams

SUITES = ("theorem1", "docalc", "gradcheck", "metrics", "simulator")


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{status}] {self.name}: {self.value:.3e} vs {self.threshold:.1e}{extra}"


@dataclass
class SuiteResult:
    suite: str
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, value, threshold, below=True, detail=""):
        ok = value < threshold if below else value > threshold
        self.checks.append(Check(name, float(value), float(threshold), bool(ok), detail))

    def lines(self) -> list:
        return [c.line() for c in self.checks] + [f"suite {self.suite}: {'PASS' if self.passed else 'FAIL'}"]


# --------------------------------------------------------------------------
# theorem 1


def random_recsys_case(rng):
    """A small recommendation SCM with random mechanism weights (w_r = 0)."""
    n_genres = int(rng.integers(1, 4))
    per_genre = int(rng.integers(1, 5 // n_genres + 1))
    catalog = sim.generate_catalog(n_genres, per_genre, int(rng.integers(1 << 30)))
    n_users = int(rng.integers(1, 3))
    users = sim.generate_users(n_users, n_genres, int(rng.integers(1 << 30)))
    params = sim.DecisionModelParams(
        w_p=float(rng.normal(0, 3)), w_d=float(rng.normal(0, 2)), w_r=0.0, b=float(rng.normal(0, 1.5))
    )
    T = int(rng.integers(1, 5))
    exposure = [rng.dirichlet(np.ones(len(catalog)), size=n_users) for _ in range(T)]
    prior = rng.dirichlet(np.ones(n_users))
    model = scm.build_recsys_scm(T, params, users, catalog, exposure_cpts=exposure, p_prior=prior)
    return model, T, users, params, catalog


def suite_theorem1(n_models: int = 100, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    res = SuiteResult("theorem1")
    worst_identity = 0.0
    worst_oracle = 0.0
    for _ in range(n_models):
        model, T, users, params, catalog = random_recsys_case(rng)
        s_values = [int(s) for s in rng.integers(0, len(catalog), size=T)]
        for p in range(len(users)):
            for t in range(1, T + 1):
                worst_identity = max(worst_identity, scm.verify_theorem1(model, t, s_values, p))
                dos = {scm.s_node(k): s_values[k - 1] for k in range(1, t + 1)}
                lhs = scm.query(model, scm.d_node(t), {"P": p}, dos)[1]
                gt = sim.ground_truth_interventional_prob(users[p], params, catalog, s_values[:t], method="enumerate")
                worst_oracle = max(worst_oracle, abs(lhs - gt))
    res.add("do-query vs one-step decomposition", worst_identity, 1e-9, detail=f"{n_models} SCMs")
    res.add("do-query vs path enumeration", worst_oracle, 1e-9)
    return res


# --------------------------------------------------------------------------
# do-calculus


def random_dag(rng, n_nodes):
    names = [f"V{i}" for i in range(n_nodes)]
    parents = {v: tuple(names[j] for j in range(i) if rng.random() < 0.45) for i, v in enumerate(names)}
    return parents


def _random_sets(rng, nodes):
    """Pairwise-disjoint X, Y, Z, W with non-empty Y and Z."""
    nodes = list(nodes)
    labels = rng.integers(0, 5, size=len(nodes))  # 0:X 1:Y 2:Z 3:W 4:unused
    sets = [tuple(v for v, lab in zip(nodes, labels) if lab == k) for k in range(4)]
    return sets


def rule2_counterexample() -> scm.Scm:
    """U confounds X and Y, so P(y | do(x)) differs from P(y | x)."""
    nodes = [
        scm.NodeSpec("U", 2, (), np.array([0.5, 0.5])),
        scm.NodeSpec("X", 2, ("U",), np.array([[0.9, 0.1], [0.1, 0.9]])),
        scm.NodeSpec("Y", 2, ("U", "X"), np.array([[[0.9, 0.1], [0.7, 0.3]], [[0.3, 0.7], [0.1, 0.9]]])),
    ]
    return scm.Scm(nodes)


def suite_docalc(per_rule: int = 20, seed: int = 0, max_tries: int = 5000) -> SuiteResult:
    rng = np.random.default_rng(seed)
    res = SuiteResult("docalc")
    found = {1: 0, 2: 0, 3: 0}
    worst = {1: 0.0, 2: 0.0, 3: 0.0}
    tries = 0
    while min(found.values()) < per_rule and tries < max_tries:
        tries += 1
        parents = random_dag(rng, int(rng.integers(3, 7)))
        x, y, z, w = _random_sets(rng, parents)
        if not y or not z:
            continue
        sizes = {v: int(rng.integers(2, 4)) for v in parents}
        model = scm.random_cpts(parents, sizes, rng, concentration=0.7)
        for rule in (1, 2, 3):
            if found[rule] >= per_rule:
                continue
            if not scm.d_separated(model, y, z, w, variant=scm.RULE_VARIANT[rule], x=x):
                continue
            check = scm.check_docalc_rule(model, rule, x, y, z, w)
            if check.n_points == 0:
                continue
            found[rule] += 1
            worst[rule] = max(worst[rule], check.max_abs_diff)
    for rule in (1, 2, 3):
        res.add(f"rule {rule}: applicable configurations found", found[rule], per_rule - 0.5, below=False)
        res.add(f"rule {rule}: max |lhs - rhs|", worst[rule], 1e-9)
    ce = scm.check_docalc_rule(rule2_counterexample(), 2, x=(), y=("Y",), z=("X",), w=())
    res.add("rule 2 counterexample is flagged non-applicable", float(ce.applicable), 0.5)
    res.add("rule 2 counterexample gap", ce.max_abs_diff, 0.05, below=False)
    return res


# --------------------------------------------------------------------------
# gradients


def perturbed_model(rng, n_items=7, embed_dim=4, scale=0.5) -> SeqModelParams:
    p = SeqModelParams.init(n_items, embed_dim, seed=int(rng.integers(1 << 30)))
    for name in PARAM_NAMES:
        arr = getattr(p, name)
        arr += rng.normal(0.0, scale, arr.shape)
    return p


def random_sequences(rng, n_items, n_seq=4, max_len=6):
    return [
        (rng.integers(0, n_items, size=L).astype(np.int64), rng.integers(0, 2, size=L).astype(np.int64))
        for L in rng.integers(1, max_len + 1, size=n_seq)
    ]


def _relative_error(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


def numeric_gradient(fn, params: SeqModelParams, h=1e-4) -> SeqModelParams:
    grads = params.zeros_like()
    for name in PARAM_NAMES:
        arr, g = getattr(params, name), getattr(grads, name)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            fp = fn(params)
            arr[idx] = old - h
            fm = fn(params)
            arr[idx] = old
            g[idx] = (fp - fm) / (2 * h)
    return grads


def max_rel_error(analytic: SeqModelParams, numeric: SeqModelParams) -> float:
    return max(_relative_error(getattr(analytic, n), getattr(numeric, n)) for n in PARAM_NAMES)


def csrec_reference_loss(model, seqs, branches, lam, fixed_targets=None):
    """Constrained loss written step by step (independent of the vectorized version)."""
    total = 0.0
    for k, ((it, de), (p1, p0)) in enumerate(zip(seqs, branches)):
        f = seqrec.predict_positions(model, [(it, de)], 50)
        bce_term = sum(seqrec.bce(f[t], de[t]) for t in range(len(it))) / len(it)
        pen = 0.0
        for t in range(1, len(it)):
            target = fixed_targets[k][t] if fixed_targets is not None else p1[t] * f[t - 1] + p0[t] * (1 - f[t - 1])
            pen += (f[t] - target) ** 2
        total += bce_term + lam * pen / max(len(it) - 1, 1)
    return total / len(seqs)


def suite_gradcheck(n_models: int = 20, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    res = SuiteResult("gradcheck")
    worst = {"observational": 0.0, "csrec detach": 0.0, "csrec no-detach": 0.0}
    for _ in range(n_models):
        model = perturbed_model(rng)
        ftilde = perturbed_model(rng)
        seqs = random_sequences(rng, model.n_items)
        labels = np.concatenate([d for _, d in seqs]).astype(float)
        runs = seqrec.runs_for_sequences(seqs, 50, model.n_items)
        _, g = seqrec.loss_and_grads(model, runs, labels)
        num = numeric_gradient(lambda p: float(np.mean(seqrec.bce(seqrec.predict_runs(p, runs), labels))), model)
        worst["observational"] = max(worst["observational"], max_rel_error(g, num))

        branches = seqrec.branch_probs(ftilde, seqs, 50)
        for detach in (True, False):
            hyper = CsrecHyper(lam=1.0, detach_target=detach, embed_dim=model.embed_dim)
            _, g, _ = constrained.batch_loss_and_grads(model, seqs, branches, hyper, model.n_items)
            fixed = None
            if detach:
                fixed = []
                for (it, de), (p1, p0) in zip(seqs, branches):
                    f = seqrec.predict_positions(model, [(it, de)], 50)
                    fixed.append([None] + [p1[t] * f[t - 1] + p0[t] * (1 - f[t - 1]) for t in range(1, len(it))])
            num = numeric_gradient(lambda p: csrec_reference_loss(p, seqs, branches, 1.0, fixed), model)
            key = "csrec detach" if detach else "csrec no-detach"
            worst[key] = max(worst[key], max_rel_error(g, num))
    for key, value in worst.items():
        res.add(f"{key}: max relative error", value, 1e-4, detail=f"{n_models} models")
    return res


# --------------------------------------------------------------------------
# metrics


def brute_rank(scores, candidate):
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    return order.index(candidate) + 1


def brute_bce(z, d):
    total = 0.0
    for p, y in zip(z, d):
        p = min(max(p, 1e-7), 1 - 1e-7)
        total += -math.log(p) if y == 1 else -math.log(1 - p)
    return total / len(z)


def suite_metrics(n_instances: int = 1000, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    res = SuiteResult("metrics")
    mismatches = {"HR@k": 0, "NDCG@k": 0, "AHR threshold": 0, "AHR top-fraction": 0}
    bce_gap = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(1, 30))
        # coarse grid so ties occur
        scores = rng.integers(0, 6, size=n).astype(float) if rng.random() < 0.5 else rng.normal(size=n)
        cand = int(rng.integers(n))
        k = int(rng.integers(1, n + 2))
        r = brute_rank(list(scores), cand)
        if metrics.hr_at_k(metrics.rank_of(scores, cand), k) != (1 if r <= k else 0):
            mismatches["HR@k"] += 1
        if metrics.ndcg_at_k(metrics.rank_of(scores, cand), k) != ((1.0 / math.log2(r + 1)) if r <= k else 0.0):
            mismatches["NDCG@k"] += 1

        m = int(rng.integers(1, 40))
        z = rng.choice([0.0, 0.2, 0.5, 0.8, 1.0], size=m) if rng.random() < 0.3 else rng.random(m)
        d = rng.integers(0, 2, size=m)
        alpha = float(rng.choice([0.2, 0.5, rng.uniform(0.01, 0.99)]))
        agree = sum(1 for zi, di in zip(z, d) if (1 if zi >= 1 - alpha else 0) == di)
        if metrics.ahr_threshold(z, d, alpha) != agree / m:
            mismatches["AHR threshold"] += 1
        S = rng.integers(0, 4, size=(m, n)).astype(float)
        cands = rng.integers(0, n, size=m)
        cutoff = math.ceil(alpha * n)
        agree = sum(1 for s, c, di in zip(S, cands, d) if (1 if brute_rank(list(s), int(c)) <= cutoff else 0) == di)
        if metrics.ahr_topfrac(S, cands, d, alpha)[1] != agree / m:
            mismatches["AHR top-fraction"] += 1
        bce_gap = max(bce_gap, abs(metrics.bce_metric(z, d) - brute_bce(z, d)))
    for name, count in mismatches.items():
        res.add(f"{name}: mismatches vs brute force", count, 0.5, detail=f"{n_instances} instances")
    res.add("BCE: max |vectorized - loop|", bce_gap, 1e-12)
    return res


# --------------------------------------------------------------------------
# simulator


def suite_simulator(seed: int = 0, n_draws: int = 100_000) -> SuiteResult:
    res = SuiteResult("simulator")
    catalog = sim.generate_catalog(4, 5, seed)
    user = sim.generate_user(0, 4, seed)
    params = sim.DecisionModelParams(w_r=0.0)

    # recursion and path enumeration agree
    rng = np.random.default_rng(seed)
    gap = 0.0
    for _ in range(10):
        s = [int(v) for v in rng.integers(0, len(catalog), size=10)]
        gap = max(gap, abs(sim.ground_truth_interventional_prob(user, params, catalog, s, method="recursion")
                          - sim.ground_truth_interventional_prob(user, params, catalog, s, method="enumerate")))
    res.add("t=10: recursion vs 2^9-path enumeration", gap, 1e-10)

    # empirical first-step acceptance against the formula, 3 sigma
    forced = np.zeros(len(catalog))
    forced[3] = 1.0
    policy = sim.ExposurePolicy("popularity", weights=tuple(forced))
    n = 4000
    accepts = sum(sim.simulate_interventional(sim.UserProfile(u, user.prefs), params, catalog, policy, 1, seed).events[0][1]
                  for u in range(n))
    p = sim.decision_prob(user, params, 3, None, catalog=catalog)
    z = abs(accepts / n - p) / math.sqrt(p * (1 - p) / n)
    res.add("first-step acceptance frequency (z-score)", z, 3.0)

    # kappa = 0 observational exposure follows popularity (chi-square)
    obs = sim.simulate_observational(user, params, catalog, sim.ExposurePolicy("user-proposal", 0.0), n_draws, seed)
    counts = np.bincount(obs.items, minlength=len(catalog))
    expected = catalog.popularity / catalog.popularity.sum() * n_draws
    pval = stats.chisquare(counts, expected).pvalue
    res.add("kappa=0 exposure ~ popularity (chi-square p)", pval, 1e-3, below=False)

    intv = sim.simulate_interventional(user, params, catalog, sim.ExposurePolicy("uniform"), n_draws, seed)
    counts = np.bincount(intv.items, minlength=len(catalog))
    sd = math.sqrt(n_draws * (1 / len(catalog)) * (1 - 1 / len(catalog)))
    res.add("uniform exposure: max |count - N/n| / sd", float(np.max(np.abs(counts - n_draws / len(catalog))) / sd), 4.0)

    # the same context yields the same acceptance rate in both regimes
    def rate(seq, item, prev):
        it, de = seq.items, seq.decisions
        mask = (it[1:] == item) & (de[:-1] == prev)
        return de[1:][mask]

    worst = 0.0
    pol = sim.ExposurePolicy("user-proposal", 1.0)
    obs = sim.simulate_observational(user, params, catalog, pol, n_draws, seed + 1)
    for item in range(len(catalog)):
        for prev in (0, 1):
            a, b = rate(obs, item, prev), rate(intv, item, prev)
            if len(a) < 50 or len(b) < 50:
                continue
            pa, pb = a.mean(), b.mean()
            pooled = (a.sum() + b.sum()) / (len(a) + len(b))
            se = math.sqrt(max(pooled * (1 - pooled), 1e-12) * (1 / len(a) + 1 / len(b)))
            worst = max(worst, abs(pa - pb) / se)
    res.add("cross-regime acceptance, max z over contexts", worst, 4.0)

    bundle = sim.simulate_users(sim.generate_users(5, 4, seed), params, catalog,
                                sim.ExposurePolicy(), sim.ExposurePolicy("uniform"), 20, 10, seed)
    again = sim.simulate_users(sim.generate_users(5, 4, seed), params, catalog,
                               sim.ExposurePolicy(), sim.ExposurePolicy("uniform"), 20, 10, seed)
    same = all(a.obs == b.obs and a.intv == b.intv for a, b in zip(bundle, again))
    res.add("regeneration is identical (mismatch flag)", float(not same), 0.5)
    return res


def run_suite(name: str) -> SuiteResult:
    fn = {
        "theorem1": suite_theorem1,
        "docalc": suite_docalc,
        "gradcheck": suite_gradcheck,
        "metrics": suite_metrics,
        "simulator": suite_simulator,
    }.get(name)
    if fn is None:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")
    return fn()
