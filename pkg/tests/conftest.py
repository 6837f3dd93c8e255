import numpy as np
import pytest

from prtransx.kg import DiseaseHierarchy, Entity, KnowledgeGraph
from prtransx.pipeline import make_corpus


def make_graph(n_per_type=4):
    """C16 -> C16.9 -> {C16.902, C16.903} and K25 -> K25.1 -> K25.101, plus tails."""
    codes = ["C16", "C16.9", "C16.902", "C16.903", "K25", "K25.1", "K25.101"]
    entities = [Entity(i, "disease", c) for i, c in enumerate(codes)]
    for typ, prefix in (("medicine", "m"), ("symptom", "s"), ("operation", "o"),
                        ("laboratory", "l"), ("examination", "x")):
        for j in range(1, n_per_type + 1):
            entities.append(Entity(len(entities), typ, f"{prefix}{j}"))
    parent = {0: None, 1: 0, 2: 1, 3: 1, 4: None, 5: 4, 6: 5}
    return KnowledgeGraph(entities, DiseaseHierarchy(parent))


@pytest.fixture
def graph():
    return make_graph()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def corpus():
    return make_corpus()
