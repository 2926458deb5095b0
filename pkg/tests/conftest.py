import numpy as np
import pytest

from atbrg.kg import KnowledgeGraph

TOY_TRIPLES = [
    ("Blouse", "Category", "Shirt"),
    ("Dress", "Category", "Shirt"),
    ("Shirt", "Audience", "Girl"),
    ("Blouse", "Color", "White"),
    ("Dress", "Color", "Red"),
    ("Skirt", "Audience", "Girl"),
]
TOY_ALIGNMENT = {0: "Blouse", 1: "Dress", 2: "Skirt"}


@pytest.fixture
def toy_kg():
    return KnowledgeGraph.from_triples(TOY_TRIPLES, TOY_ALIGNMENT)


def random_kg(rng: np.random.Generator, max_entities=50, max_triples=200, max_relations=5, n_items=None):
    n_ent = int(rng.integers(2, max_entities + 1))
    n_rel = int(rng.integers(1, max_relations + 1))
    n_tri = int(rng.integers(1, max_triples + 1))
    names = [f"e{i}" for i in range(n_ent)]
    triples = [(names[rng.integers(n_ent)], f"r{rng.integers(n_rel)}", names[rng.integers(n_ent)])
               for _ in range(n_tri)]
    triples = [t for t in triples if t[0] != t[2]] or [(names[0], "r0", names[1])]
    n_items = n_items or int(rng.integers(1, min(10, n_ent) + 1))
    anchors = rng.choice(n_ent, size=n_items, replace=False)
    alignment = {i: names[a] for i, a in enumerate(anchors)}
    return KnowledgeGraph.from_triples(triples, alignment, entities=names), triples, alignment
