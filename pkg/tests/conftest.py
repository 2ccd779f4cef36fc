import random

import pytest
from hypothesis import settings

from treedst.ontology import load_ontology
from treedst.simulator import load_grammar, simulate_conversation
from treedst.dataset import Corpus, annotate

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def ont():
    return load_ontology()


@pytest.fixture(scope="session")
def grammar():
    return load_grammar()


@pytest.fixture(scope="session")
def small_corpus(grammar):
    return Corpus([annotate(simulate_conversation(grammar, s)) for s in range(40)])


@pytest.fixture
def rng():
    return random.Random(1234)
