import numpy as np
import pytest

from cpl.baselines import two_step_augment, two_step_baseline
from cpl.extractor import Extractor
from cpl.graph import Triple
from cpl.reasoner import Reasoner

from conftest import small_config


@pytest.fixture
def extractor(small_data):
    cfg = small_config()
    return Extractor(small_data.corpus, small_data.kg, cfg.extractor_config(), np.random.default_rng(0))


def test_threshold_one_adds_nothing(small_data, extractor):
    aug, added = two_step_augment(small_data.kg, extractor, 1.0)
    assert added == []
    assert aug.base_triples() == small_data.kg.base_triples()


def test_threshold_zero_takes_every_bags_top_relation(small_data, extractor):
    kg = small_data.kg
    aug, added = two_step_augment(kg, extractor, 0.0)
    expected = []
    for key in sorted(small_data.corpus.bags):
        p = extractor.bag_relation_probs(small_data.corpus.bags[key])
        j = max((i for i in range(len(p)) if i != extractor.na), key=lambda i: (p[i], -i))
        t = Triple(key[0], extractor.relations[j], key[1])
        if not kg.has_edge(t):
            expected.append(t)
    assert added == expected
    assert aug.n_triples() == kg.n_triples() + 2 * len(added)
    for t in added:
        assert aug.has_base(t) and aug.has_base(Triple(t.object, kg.inverse_relation(t.relation), t.subject))
    # the source graph is untouched
    assert not any(kg.has_edge(t) for t in added)


def test_edge_count_shrinks_as_threshold_rises(small_data, extractor):
    counts = [len(two_step_augment(small_data.kg, extractor, th)[1]) for th in (0.0, 0.3, 0.6, 0.9, 1.0)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    with pytest.raises(ValueError):
        two_step_augment(small_data.kg, extractor, 1.5)


def test_best_threshold_chosen_by_validation_mrr(small_data, extractor):
    cfg = small_config()
    seen = []

    def fit(aug):
        seen.append(aug.n_triples())
        return Reasoner(aug.n_entities, aug.n_relations, cfg.reasoner_config(), np.random.default_rng(0))

    res = two_step_baseline(cfg, small_data.kg, extractor, [1.0, 0.0], small_data.queries["valid"], fit)
    assert [r.threshold for r in res.runs] == [1.0, 0.0]
    assert len(seen) == 2 and seen[0] <= seen[1]
    best = max(r.valid_metrics["mrr"] for r in res.runs)
    first = next(r for r in res.runs if r.valid_metrics["mrr"] == best)
    assert res.best is first
    assert res.edges_added == first.edges_added
    with pytest.raises(ValueError):
        two_step_baseline(cfg, small_data.kg, extractor, [], small_data.queries["valid"], fit)
