import numpy as np
import pytest

from ralp import toy
from ralp.alp import ScipyBackend, grid_plan, nu_sample_set, prepare_plan
from ralp.mdp import split_rng

TOY_STATES = np.linspace(0.0, 1.0, 1001)[:, None]
TOY_ACTIONS = np.linspace(0.0, 1.0, 101)[:, None]


@pytest.fixture(scope="session")
def toy_mdp():
    return toy.build_toy()


@pytest.fixture(scope="session")
def toy_grid_prepared(toy_mdp):
    # 1001 x 101 dense grid, prepared once for the whole session
    return prepare_plan(toy_mdp, grid_plan(TOY_STATES, TOY_ACTIONS))


@pytest.fixture(scope="session")
def toy_nu_samples(toy_mdp):
    return nu_sample_set(toy_mdp.state_relevance, 10_000, split_rng(0, 22))


@pytest.fixture(scope="session")
def backend():
    return ScipyBackend()
