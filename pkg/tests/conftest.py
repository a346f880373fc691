import numpy as np
import pytest

from cpl.config import Config
from cpl.data import dataset_from_synthetic
from cpl.graph import KnowledgeGraph, Triple, Vocabulary, add_inverse_edges
from cpl.synthetic import PatternSpec, generate


def small_config(**changes) -> Config:
    base = Config(entity_dim=4, relation_dim=4, hidden_dim=4, mlp_dim=6, word_dim=4, pos_dim=2, pos_window=10,
                  n_filters=4, ext_relation_dim=4, max_sentence_len=16, T=3, batch_size=8, rollouts_per_query=2,
                  b_r=1, b_e=1, e_a=1, e_m=2, k_suggestions=2, pretrain_reasoner_epochs=1,
                  pretrain_extractor_epochs=1, beam_width=5, eval_every=1, seed=55)
    return base.replace(**changes)


def toy_graph() -> KnowledgeGraph:
    """a -p-> b -q-> c, a -s-> d, with inverses."""
    ents = Vocabulary(["a", "b", "c", "d", "e"])
    rels = Vocabulary(["p", "q", "s"])
    base = KnowledgeGraph.from_triples([Triple(0, 0, 1), Triple(1, 1, 2), Triple(0, 2, 3)], ents, rels)
    return add_inverse_edges(base)


@pytest.fixture
def kg():
    return toy_graph()


@pytest.fixture(scope="session")
def small_synth():
    return generate(PatternSpec(n_entities=40, seed=3))


@pytest.fixture(scope="session")
def small_data(small_synth):
    return dataset_from_synthetic(small_synth, max_sentence_len=16)


@pytest.fixture
def cfg():
    return small_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
