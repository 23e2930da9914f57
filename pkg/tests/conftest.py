import logging

import numpy as np
import pytest

from ugrec.graph import EntityKind, RelationCatalog, Triplet, UnifiedGraph, Vocabulary
from ugrec.model import ModelConfig, ModelParams
from ugrec.synth import SynthConfig, generate_synthetic_graph

logging.getLogger("ugrec").setLevel(logging.ERROR)

# relation ids: 0 interact, 1 belong_to, 2 co_view
SPECS = [
    ("interact", "Directed", "User", "Item", True),
    ("belong_to", "Directed", "Item", "Attribute", False),
    ("co_view", "Undirected", "Item", "Item", False),
]


@pytest.fixture
def catalog():
    return RelationCatalog.from_specs(SPECS)


def random_params(n_entities, k, rng, *, n_relations=3, directed=(True, True, False), config=None,
                  scale=1.0, bias_scale=0.5):
    """Dense random parameters (not unit-ball constrained) for geometry and gradient tests."""
    config = config or ModelConfig(k=k)
    n_att = 1 if config.shared_attention else n_relations
    return ModelParams(
        entity_emb=rng.normal(scale=scale, size=(n_entities, k)),
        entity_proj=rng.normal(scale=scale, size=(n_entities, k)),
        rel_emb=rng.normal(scale=scale, size=(n_relations, k)),
        rel_proj=rng.normal(scale=scale, size=(n_relations, k)),
        att_weight=rng.normal(scale=scale, size=(n_att, k, 2 * k)),
        att_bias=rng.normal(scale=bias_scale, size=(n_att, k)),
        rel_directed=np.array(directed, dtype=bool),
        config=config,
    )


def build_graph(catalog, interactions, side=()):
    """``interactions``: (user, item, ts) name tuples; ``side``: (head, tail, relation) name tuples."""
    vocab = Vocabulary()
    trips = []
    inter = catalog.interaction
    for u, i, ts in interactions:
        trips.append(Triplet(vocab.add(EntityKind.USER, "", u), vocab.add(EntityKind.ITEM, "", i), inter.id, ts))
    for h, t, rname in side:
        rel = catalog.by_name(rname)
        hid = vocab.add(rel.head_kind, Vocabulary.namespace_for(rel.head_kind, rel), h)
        tid = vocab.add(rel.tail_kind, Vocabulary.namespace_for(rel.tail_kind, rel), t)
        trips.append(Triplet(hid, tid, rel.id))
    return UnifiedGraph.from_triplets(catalog, vocab, trips)


@pytest.fixture(scope="session")
def synth_graph():
    graph, clusters = generate_synthetic_graph(SynthConfig(n_users=60, n_items=40, seed=3))
    return graph


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.VERDICTS:
            terminalreporter.write_line(line)
