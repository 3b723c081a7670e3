"""Shared fixtures: the default seeded corpus and everything fit from it.

Session-scoped because corpus simulation and matrix fitting are the
expensive steps; all tests treat these objects as read-only.
"""

import pytest

from safetydrift import config as cfg
from safetydrift import evaluate as ev
from safetydrift.estimation import split_train_test
from safetydrift.simulate import write_traces

DEFAULT_SEED = 7


@pytest.fixture(scope="session")
def app():
    return cfg.load_config()


@pytest.fixture(scope="session")
def corpus(app):
    return cfg.simulate_corpus(app, DEFAULT_SEED)


@pytest.fixture(scope="session")
def corpus_file(corpus, tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "default.jsonl"
    write_traces(corpus, path)
    return path


@pytest.fixture(scope="session")
def split(corpus):
    return split_train_test(corpus, 0.8, DEFAULT_SEED)


@pytest.fixture(scope="session")
def matrices(split):
    return ev.fit_category_matrices(split[0])


@pytest.fixture(scope="session")
def thetas(split, matrices):
    return ev.calibrate_all(split[0], matrices, horizon=5, fpr_budget=0.15)
