import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from csrec import constrained, metrics, seqrec, sim
from csrec.estimators import CSRecRecommender, ObservationalRecommender
from csrec.exceptions import EmptyData, UnknownItem
from csrec.sim import EventSequence

SMALL = dict(embed_dim=4, epochs=2, batch_size=32, learning_rate=0.01)


@pytest.fixture(scope="module")
def records():
    cat = sim.generate_catalog(2, 3, 1)
    users = sim.generate_users(20, 2, 1)
    return sim.simulate_users(users, sim.DecisionModelParams(w_r=0.0), cat, sim.ExposurePolicy(),
                              sim.ExposurePolicy("uniform"), 10, 6, 1)


@pytest.fixture(scope="module")
def fitted(records):
    obs = ObservationalRecommender(n_items=6, **SMALL).fit([r.obs for r in records])
    cs = CSRecRecommender(ftilde=obs, **SMALL).fit([r.intv for r in records])
    return obs, cs


def test_params_round_trip():
    est = CSRecRecommender(lam=0.5, detach_target=False, embed_dim=8)
    params = est.get_params()
    assert params["lam"] == 0.5 and params["detach_target"] is False and params["embed_dim"] == 8
    twin = clone(est)
    assert twin.get_params() == params
    assert est.set_params(lam=2.0).lam == 2.0


def test_fit_matches_functional_api(records):
    est = ObservationalRecommender(n_items=6, **SMALL).fit([r.obs for r in records])
    hyper = seqrec.Hyperparams(**SMALL)
    ref = seqrec.train_observational([r.obs for r in records], hyper, n_items=6)
    assert est.params_.flat().tobytes() == ref.params.flat().tobytes()
    assert est.loss_trace_ == ref.loss_trace and est.n_items_ == 6


def test_inferred_catalog_size():
    est = ObservationalRecommender(**SMALL).fit([[(0, 1), (4, 0)], [(2, 1)]])
    assert est.n_items_ == 5


def test_input_formats_agree(fitted, records):
    obs, _ = fitted
    seq = records[0].obs
    as_pairs = [tuple(e) for e in seq.events]
    as_arrays = (seq.items, seq.decisions)
    a = obs.predict_proba([seq])
    np.testing.assert_array_equal(a, obs.predict_proba([as_pairs]))
    np.testing.assert_array_equal(a, obs.predict_proba([as_arrays]))
    np.testing.assert_array_equal(obs.predict([seq]), (a >= 0.5).astype(int))


def test_prediction_helpers(fitted, records):
    obs, cs = fitted
    seq = records[1].intv
    np.testing.assert_allclose(cs.predict_sequence(seq), constrained.predict_sequence(cs.params_, seq))
    p = cs.accept_proba([(0, 1)])
    assert p.shape == (6,) and np.all((p > 0) & (p < 1))
    np.testing.assert_array_equal(cs.accept_proba([(0, 1)], items=[2, 4]), p[[2, 4]])
    assert cs.rank_catalog([0, 3]) == constrained.rank_catalog_observational(cs.params_, [0, 3])
    p1, p0 = obs.branch_proba([], 1, 2)
    assert 0 < p1 < 1 and 0 < p0 < 1


def test_score_is_negative_bce(fitted, records):
    obs, _ = fitted
    X = [r.obs for r in records[:5]]
    y = np.concatenate([s.decisions for s in X])
    assert obs.score(X) == pytest.approx(-metrics.bce_metric(obs.predict_proba(X), y))


def test_constraint_trace(fitted, records):
    _, cs = fitted
    trace = cs.constraint_trace(records[2].intv)
    assert len(trace.f) == len(records[2].intv) and np.isnan(trace.target[0])
    assert len(cs.residual_trace_) == SMALL["epochs"]


def test_unfitted_estimators():
    with pytest.raises(NotFittedError):
        ObservationalRecommender().predict_proba([[(0, 1)]])
    with pytest.raises(NotFittedError):
        CSRecRecommender(ftilde=ObservationalRecommender()).fit([[(0, 1)]])


def test_csrec_needs_an_observational_model():
    with pytest.raises(ValueError):
        CSRecRecommender().fit([[(0, 1)]])


def test_warm_start_needs_matching_width(fitted, records):
    obs, _ = fitted
    with pytest.raises(ValueError):
        CSRecRecommender(ftilde=obs, embed_dim=5, epochs=1).fit([r.intv for r in records])


def test_raw_parameters_accepted_as_observational_model(fitted, records):
    obs, cs = fitted
    twin = CSRecRecommender(ftilde=obs.params_, **SMALL).fit([r.intv for r in records])
    assert twin.params_.flat().tobytes() == cs.params_.flat().tobytes()


@pytest.mark.parametrize(
    "X, err, description",
    [
        ([], EmptyData, "no sequences"),
        ([[]], EmptyData, "empty sequence"),
        ([[(0, 2)]], ValueError, "decision outside {0, 1}"),
        ([[(9, 1)]], UnknownItem, "item outside the catalog"),
        ([[(-1, 1)]], UnknownItem, "negative item id"),
        ([[(0.5, 1)]], ValueError, "fractional item id"),
        ([[(0, 1, 2)]], ValueError, "malformed event"),
    ],
)
def test_invalid_sequences(X, err, description):
    with pytest.raises(err):
        ObservationalRecommender(n_items=6, **SMALL).fit(X)


@pytest.mark.parametrize("n_items, err", [(0, ValueError), (2.5, TypeError), (True, TypeError)])
def test_invalid_catalog_size(n_items, err):
    with pytest.raises(err):
        ObservationalRecommender(n_items=n_items).fit([[(0, 1)]])


def test_event_sequence_input(fitted):
    obs, _ = fitted
    seq = EventSequence(sim.OBSERVATIONAL, ((0, 1), (1, 0)))
    assert obs.predict_proba([seq]).shape == (2,)
