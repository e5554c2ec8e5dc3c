import numpy as np
import pytest

from ctmdp.catalog import mm1_adm, random_model, single_state
from ctmdp.model import validate_model

CORPUS_SEED = 20261015
CORPUS_SIZE = 200


def build_corpus(size=CORPUS_SIZE, seed=CORPUS_SEED):
    rng = np.random.default_rng(seed)
    models = []
    while len(models) < size:
        m = random_model(rng)
        if validate_model(m).ok:
            models.append(m)
    return models


@pytest.fixture(scope="session")
def corpus():
    return build_corpus()


@pytest.fixture
def mm1():
    return mm1_adm()


@pytest.fixture
def one_state():
    return single_state()


def zero_cost(model):
    return model.with_cost([np.zeros_like(c) for c in model.cost])
