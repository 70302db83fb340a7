import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("csrec", max_examples=50, deadline=None)
settings.load_profile("csrec")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_config_dict():
    return {
        "simulator": {"n_users": 40, "n_genres": 3, "items_per_genre": 4, "obs_length": 12, "intv_length": 8},
        "model": {"embed_dim": 6, "epochs": 2, "csrec_epochs": 2, "batch_size": 64, "learning_rate": 0.01},
        "eval": {"k": [2, 5], "beta": 3},
        "seed": 3,
    }


@pytest.fixture(scope="session")
def experiment():
    """The simulator experiment shared by the acceptance suite and the model tests.

    500 users, 10 genres x 20 items, observational length 60 (user-driven
    exposure), interventional length 30 (uniform exposure), no repeat penalty.
    Both models use the default hyperparameters.
    """
    import time

    from csrec import constrained, seqrec, sim

    t0 = time.perf_counter()
    catalog = sim.generate_catalog(10, 20, seed=0)
    params = sim.DecisionModelParams(w_r=0.0)
    users = sim.generate_users(500, 10, seed=0)
    records = sim.simulate_users(
        users, params, catalog, sim.ExposurePolicy("user-proposal", 3.0), sim.ExposurePolicy("uniform"), 60, 30, 0
    )
    split = sim.split_dataset(records, (0.8, 0.1, 0.1), seed=0)
    by_id = {r.user_id: r for r in records}
    train = [by_id[u] for u in split["train"]]
    test = [by_id[u] for u in split["test"]]
    ftilde = seqrec.train_observational([r.obs for r in train], seqrec.Hyperparams(), n_items=len(catalog)).params
    csrec = constrained.train_csrec([r.intv for r in train], ftilde, constrained.CsrecHyper()).params
    return {
        "catalog": catalog, "params": params, "train": train, "test": test,
        "ftilde": ftilde, "csrec": csrec, "seconds": time.perf_counter() - t0,
    }


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when == "call" and "test_acceptance" in rep.nodeid:
                lines += [ln for ln in rep.capstdout.splitlines() if ln[:1] == "A" and ln[1:2].isdigit()]
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in sorted(lines, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(ln)
