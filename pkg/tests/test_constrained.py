import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import logit

from csrec import constrained, metrics, seqrec, sim
from csrec.constrained import CsrecHyper
from csrec.exceptions import EmptyData
from csrec.harness.verify import csrec_reference_loss, max_rel_error, numeric_gradient, perturbed_model, random_sequences
from csrec.seqrec import SeqModelParams

NO_REPEAT = sim.DecisionModelParams(w_r=0.0)


def exact_branches(user, catalog, params=NO_REPEAT):
    """Simulator probabilities in the shape the constraint expects from the observational model."""
    def branches(history, s_prev, s_t):
        return (
            sim.decision_prob(user, params, s_t, 1, catalog=catalog),
            sim.decision_prob(user, params, s_t, 0, catalog=catalog),
        )
    return branches


# --------------------------------------------------------------------------
# target


def test_mixture_arithmetic():
    assert constrained.mix_branches(0.8, 0.4, 0.5) == pytest.approx(0.6)


@given(st.floats(0, 1), st.floats(0, 1))
def test_certain_previous_acceptance_selects_accept_branch(p1, p0):
    assert constrained.mix_branches(p1, p0, 1.0) == p1
    assert constrained.mix_branches(p1, p0, 0.0) == p0


def test_target_with_learned_model_uses_its_branches():
    rng = np.random.default_rng(0)
    ft = perturbed_model(rng)
    seq = [(1, 1), (4, 0), (2, 1)]
    p1, p0 = seqrec.ftilde_branches(ft, [(1, 1)], 4, 2)
    assert constrained.constraint_target(ft, seq, 3, 0.3) == pytest.approx(0.3 * p1 + 0.7 * p0, abs=1e-15)


@pytest.mark.parametrize("t, f_prev", [(1, 0.5), (2, -0.1), (2, 1.5), (9, 0.5)])
def test_target_preconditions(t, f_prev):
    with pytest.raises(ValueError):
        constrained.constraint_target(SeqModelParams.zeros(5, 2), [(0, 1), (1, 0), (2, 1)], t, f_prev)


@pytest.mark.parametrize("seed", range(5))
def test_exact_target_reproduces_ground_truth(seed):
    catalog = sim.generate_catalog(3, 4, seed)
    user = sim.generate_user(seed, 3, seed)
    rng = np.random.default_rng(seed)
    s = [int(v) for v in rng.integers(0, len(catalog), 10)]
    seq = [(v, 0) for v in s]
    f_prev = sim.ground_truth_interventional_prob(user, NO_REPEAT, catalog, s[:1])
    for t in range(2, 11):
        target = constrained.constraint_target(exact_branches(user, catalog), seq, t, f_prev)
        assert abs(target - sim.ground_truth_interventional_prob(user, NO_REPEAT, catalog, s[:t])) < 1e-10
        f_prev = target


# --------------------------------------------------------------------------
# predictions


def test_zero_model_predicts_one_half():
    np.testing.assert_array_equal(
        constrained.predict_sequence(SeqModelParams.zeros(4, 3), [(0, 1), (3, 0), (2, 1)]), [0.5, 0.5, 0.5]
    )


def test_first_prediction_ignores_decisions():
    model = perturbed_model(np.random.default_rng(2))
    a = constrained.predict_sequence(model, [(3, 1), (1, 1)])
    b = constrained.predict_sequence(model, [(3, 0), (1, 0)])
    assert a[0] == b[0] and a[1] != b[1]


def test_predict_sequences_splits_per_sequence():
    model = perturbed_model(np.random.default_rng(2))
    seqs = random_sequences(np.random.default_rng(3), 7, n_seq=4)
    parts = constrained.predict_sequences(model, seqs)
    assert [len(p) for p in parts] == [len(it) for it, _ in seqs]
    for part, seq in zip(parts, seqs):
        np.testing.assert_allclose(part, constrained.predict_sequence(model, seq), atol=1e-15)


# --------------------------------------------------------------------------
# loss


def test_zero_residual_leaves_only_bce():
    model, ftilde = SeqModelParams.zeros(4, 2), SeqModelParams.zeros(4, 2)
    seq = [(0, 1), (2, 0), (3, 1), (1, 1)]
    for lam in (0.0, 1.0, 50.0):
        loss, _, trace = constrained.csrec_loss(model, ftilde, seq, CsrecHyper(embed_dim=2, lam=lam))
        assert np.all(trace.residual == 0)
        assert loss == pytest.approx(math.log(2), abs=1e-15)


def test_single_step_loss():
    model = SeqModelParams.zeros(3, 2)
    model.c[1] = logit(0.6)
    loss, _, trace = constrained.csrec_loss(model, SeqModelParams.zeros(3, 2), [(1, 1)], CsrecHyper(embed_dim=2))
    assert loss == pytest.approx(-math.log(0.6), abs=1e-12)
    assert loss == pytest.approx(0.5108, abs=1e-4)
    assert np.isnan(trace.target[0]) and trace.mean_squared_residual == 0.0


def test_lambda_zero_is_plain_bce():
    rng = np.random.default_rng(4)
    model, ftilde = perturbed_model(rng), perturbed_model(rng)
    seq = random_sequences(rng, 7, n_seq=1, max_len=8)[0]
    loss, _, _ = constrained.csrec_loss(model, ftilde, seq, CsrecHyper(embed_dim=4, lam=0.0))
    f = constrained.predict_sequence(model, seq)
    assert loss == float(np.mean(seqrec.bce(f, seq[1].astype(float))))


def test_loss_matches_stepwise_reference():
    rng = np.random.default_rng(5)
    model, ftilde = perturbed_model(rng), perturbed_model(rng)
    seqs = random_sequences(rng, 7, n_seq=5, max_len=7)
    branches = seqrec.branch_probs(ftilde, seqs)
    loss, _, _ = constrained.batch_loss_and_grads(model, seqs, branches, CsrecHyper(embed_dim=4, lam=2.5))
    assert loss == pytest.approx(csrec_reference_loss(model, seqs, branches, 2.5), abs=1e-13)


@pytest.mark.parametrize("detach", [True, False])
@pytest.mark.parametrize("seed", range(2))
def test_gradient_matches_finite_differences(detach, seed):
    rng = np.random.default_rng(100 + seed)
    model, ftilde = perturbed_model(rng), perturbed_model(rng)
    seqs = random_sequences(rng, 7)
    branches = seqrec.branch_probs(ftilde, seqs)
    hyper = CsrecHyper(embed_dim=4, lam=1.0, detach_target=detach)
    _, grads, (f, target, _, _) = constrained.batch_loss_and_grads(model, seqs, branches, hyper)
    fixed = None
    if detach:
        bounds = np.cumsum([len(it) for it, _ in seqs])[:-1]
        fixed = [list(t) for t in np.split(target, bounds)]
    num = numeric_gradient(lambda p: csrec_reference_loss(p, seqs, branches, 1.0, fixed), model)
    assert max_rel_error(grads, num) < 1e-4


def test_detach_changes_the_gradient():
    rng = np.random.default_rng(8)
    model, ftilde = perturbed_model(rng), perturbed_model(rng)
    seqs = random_sequences(rng, 7, n_seq=3, max_len=6)
    branches = seqrec.branch_probs(ftilde, seqs)
    g = [
        constrained.batch_loss_and_grads(model, seqs, branches, CsrecHyper(embed_dim=4, detach_target=d))[1].flat()
        for d in (True, False)
    ]
    assert not np.allclose(g[0], g[1])


# --------------------------------------------------------------------------
# training


@pytest.fixture(scope="module")
def tiny_data():
    cat = sim.generate_catalog(2, 3, 0)
    users = sim.generate_users(30, 2, 0)
    recs = sim.simulate_users(users, NO_REPEAT, cat, sim.ExposurePolicy(), sim.ExposurePolicy("uniform"), 10, 8, 0)
    hyper = seqrec.Hyperparams(embed_dim=4, epochs=2, batch_size=40, learning_rate=0.01)
    ftilde = seqrec.train_observational([r.obs for r in recs], hyper, n_items=len(cat)).params
    return [r.intv for r in recs], ftilde


def test_lambda_zero_training_equals_bce_only_run(tiny_data):
    seqs, ftilde = tiny_data
    hyper = CsrecHyper(embed_dim=4, epochs=3, batch_size=40, learning_rate=0.01, lam=0.0)
    res = constrained.train_csrec(seqs, ftilde, hyper)
    # same batches, same start, plain bce (all sequences share one length)
    arrays = [seqrec._as_arrays(s) for s in seqs]

    def batch_fn(p, idx):
        chosen = [arrays[i] for i in idx]
        labels = np.concatenate([d for _, d in chosen]).astype(float)
        return seqrec.loss_and_grads(p, seqrec.runs_for_sequences(chosen, 50), labels)

    def eval_fn(p):
        return seqrec.dataset_loss(p, arrays, 50), None

    params, _, _, _, losses, _ = seqrec.fit_adam(
        ftilde.copy(), len(arrays), [len(a[0]) for a in arrays], hyper.base, batch_fn, eval_fn,
        tag=constrained._TAG_CSREC_SHUFFLE,
    )
    np.testing.assert_allclose(res.loss_trace, losses, rtol=1e-12)
    np.testing.assert_allclose(res.params.flat(), params.flat(), rtol=1e-9, atol=1e-12)


def test_lambda_zero_ignores_the_observational_model(tiny_data):
    seqs, ftilde = tiny_data
    hyper = CsrecHyper(embed_dim=4, epochs=2, batch_size=40, lam=0.0, init="random")
    other = perturbed_model(np.random.default_rng(0), n_items=ftilde.n_items, embed_dim=4)
    a = constrained.train_csrec(seqs, ftilde, hyper)
    b = constrained.train_csrec(seqs, other, hyper)
    assert a.loss_trace == b.loss_trace


def test_training_is_deterministic(tiny_data):
    seqs, ftilde = tiny_data
    hyper = CsrecHyper(embed_dim=4, epochs=2, batch_size=40, learning_rate=0.01)
    a, b = (constrained.train_csrec(seqs, ftilde, hyper) for _ in range(2))
    assert a.params.flat().tobytes() == b.params.flat().tobytes()
    assert len(a.residual_trace) == 2


def test_warm_start_does_not_touch_the_observational_model(tiny_data):
    seqs, ftilde = tiny_data
    before = ftilde.flat().copy()
    res = constrained.train_csrec(seqs, ftilde, CsrecHyper(embed_dim=4, epochs=1, batch_size=40, learning_rate=0.01))
    np.testing.assert_array_equal(ftilde.flat(), before)
    assert not np.array_equal(res.params.flat(), before)


def test_no_interventional_data(tiny_data):
    with pytest.raises(EmptyData):
        constrained.train_csrec([], tiny_data[1], CsrecHyper(embed_dim=4))


@pytest.mark.parametrize("kwargs", [{"lam": -1.0}, {"init": "zeros"}])
def test_invalid_csrec_hyperparameters(kwargs):
    with pytest.raises(ValueError):
        CsrecHyper(**kwargs)


# --------------------------------------------------------------------------
# observational ranking


def test_zero_model_ranks_by_id():
    assert constrained.rank_catalog_observational(SeqModelParams.zeros(6, 2), [3, 1]) == list(range(6))


def test_empty_history_ranks_by_bias():
    model = perturbed_model(np.random.default_rng(1))
    assert constrained.rank_catalog_observational(model, []) == sorted(range(7), key=lambda i: (-model.c[i], i))


def test_ranking_matches_sorted_probabilities(rng):
    for _ in range(100):
        model = perturbed_model(rng)
        hist = [int(v) for v in rng.integers(0, 7, rng.integers(0, 5))]
        h = seqrec.encode(model, [(v, 1) for v in hist])
        probs = [seqrec.accept_prob(model, h, j) for j in range(7)]
        assert constrained.rank_catalog_observational(model, hist) == sorted(range(7), key=lambda j: (-probs[j], j))


# --------------------------------------------------------------------------
# simulator ground truth


def test_trained_model_tracks_interventional_marginals(experiment):
    errors = []
    for r in experiment["test"]:
        f = constrained.predict_sequence(experiment["csrec"], r.intv)
        gt = sim.interventional_marginals(r.user, experiment["params"], experiment["catalog"], r.intv.items)
        errors.append(np.abs(f - gt))
    assert np.mean(np.concatenate(errors)) < 0.08


def test_csrec_beats_baseline_conversion_bce(experiment):
    seqs = [r.intv for r in experiment["test"]]
    ours = metrics.multi_step_eval(experiment["csrec"], seqs, None, kind="csrec")["BCE"]
    base = metrics.multi_step_eval(experiment["ftilde"], seqs, None, kind="baseline")
    assert ours < base["BCE_hard@0.2"]
