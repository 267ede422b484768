import numpy as np
import pytest

from mutualfriends.lexicon import build_lexicon
from mutualfriends.scenario import generate_scenarios
from mutualfriends.schema import default_schema


@pytest.fixture(scope="session")
def schema():
    return default_schema()


@pytest.fixture(scope="session")
def lexicon(schema):
    return build_lexicon(schema)


@pytest.fixture(scope="session")
def scenarios20(schema):
    return generate_scenarios(schema, 20, seed=4242)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
