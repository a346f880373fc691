import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpl.errors import MetricError
from cpl.evaluation import (INF, BeamEntry, aggregate_seeds, beam_search, evaluate_queries, hits_at_k, mrr,
                            rank_answers, write_path_report, write_report)
from cpl.graph import Triple
from cpl.reasoner import Reasoner, ReasonerConfig, ReasonerState

from oracles import brute_hits, brute_mrr, enumerate_paths, random_ranks, random_world, rank_of_gold
from test_reasoner import FixedSuggester


def _entry(end, p):
    return BeamEntry([], math.log(p), ReasonerState(0, 0, end, 0, None, None))


def test_rank_uses_best_path_per_entity():
    beam = [_entry(7, 0.5), _entry(9, 0.4), _entry(7, 0.3)]
    res = rank_answers(beam, gold=9)
    assert [e for e, _ in res.candidates] == [7, 9]
    assert res.rank == 2.0
    assert rank_answers(beam, gold=7).rank == 1.0
    assert rank_answers(beam, gold=3).rank == INF
    assert rank_answers([_entry(4, 0.2), _entry(4, 0.1)], gold=4).rank == 1.0
    with pytest.raises(ValueError):
        rank_answers([])


def test_rank_ties_go_to_lower_entity_id():
    beam = [_entry(5, 0.25), _entry(2, 0.25)]
    assert rank_answers(beam, gold=2).rank == 1.0
    assert rank_answers(beam, gold=5).rank == 2.0


def test_metric_examples():
    ranks = [1, 3, 12]
    assert hits_at_k(ranks, 10) == pytest.approx(2 / 3)
    assert mrr(ranks) == pytest.approx((1 + 1 / 3 + 1 / 12) / 3)
    assert round(mrr(ranks), 4) == 0.4722
    assert hits_at_k([1, 1], 2) == 1.0 and mrr([1, 1]) == 1.0
    # the strict inequality means rank 1 is not below K = 1
    assert hits_at_k([1, 2], 1) == 0.0
    assert hits_at_k([1, 2], 1, strict=False) == 0.5
    assert hits_at_k([INF], 10) == 0.0 and mrr([INF, 1]) == 0.5
    with pytest.raises(MetricError):
        hits_at_k([], 1)
    with pytest.raises(MetricError):
        mrr([])


def test_metrics_match_brute_force_on_random_lists():
    rng = np.random.default_rng(0)
    for _ in range(500):
        ranks = random_ranks(rng)
        for k in (1, 3, 5, 10):
            assert hits_at_k(ranks, k) == brute_hits(ranks, k)
        assert mrr(ranks) == brute_mrr(ranks)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.one_of(st.integers(1, 40).map(float), st.just(INF)), min_size=1, max_size=20))
def test_metric_monotonicity(ranks):
    hs = [hits_at_k(ranks, k) for k in range(1, 45)]
    assert all(a <= b for a, b in zip(hs, hs[1:]))
    m = mrr(ranks)
    assert 0.0 <= m <= 1.0
    assert (m == 1.0) == all(r == 1 for r in ranks)


def test_rank_matches_counting_oracle():
    rng = np.random.default_rng(3)
    for _ in range(200):
        ends = rng.integers(0, 6, size=int(rng.integers(1, 10)))
        probs = rng.choice([0.1, 0.2, 0.3, 0.05], size=len(ends))
        beam = [_entry(int(e), float(p)) for e, p in zip(ends, probs)]
        best = {}
        for e, p in zip(ends, probs):
            best[int(e)] = max(best.get(int(e), 0.0), math.exp(math.log(float(p))))
        gold = int(rng.integers(0, 7))
        assert rank_answers(beam, gold).rank == rank_of_gold(best, gold)


def test_aggregate_seeds_arithmetic():
    agg = aggregate_seeds([{"mrr": 0.4}, {"mrr": 0.6}])
    assert agg["mrr"][0] == pytest.approx(0.5, abs=1e-12)
    assert agg["mrr"][1] == pytest.approx(0.1, abs=1e-12)
    assert aggregate_seeds([{"h": 0.3}] * 3)["h"] == (pytest.approx(0.3), 0.0)
    with pytest.raises(MetricError):
        aggregate_seeds([])


@pytest.mark.parametrize("seed", range(6))
def test_saturated_beam_equals_exhaustive_enumeration(seed):
    rng = np.random.default_rng(seed)
    kg, reasoner, q = random_world(rng, n_entities=6, n_relations=3, n_edges=8)
    T = 1 + seed % 3
    oracle = enumerate_paths(q, kg, reasoner, T)
    beam = beam_search(q, kg, reasoner, None, width=len(oracle) + 5, T=T)
    assert [b.key() for b in beam] == [o[1] for o in oracle]
    np.testing.assert_allclose([b.log_prob for b in beam], [o[0] for o in oracle], atol=1e-9)
    lps = [b.log_prob for b in beam]
    assert all(a >= b for a, b in zip(lps, lps[1:]))


def test_narrow_beam_keeps_the_top_prefix_at_depth_one():
    rng = np.random.default_rng(11)
    kg, reasoner, q = random_world(rng)
    oracle = enumerate_paths(q, kg, reasoner, 1)
    beam = beam_search(q, kg, reasoner, None, width=2, T=1)
    assert [b.key() for b in beam] == [o[1] for o in oracle[:2]]
    with pytest.raises(ValueError):
        beam_search(q, kg, reasoner, None, width=0)


def test_beam_with_suggestions_leaves_graph_untouched(kg):
    r = Reasoner(kg.n_entities, kg.n_relations, ReasonerConfig(4, 4, 4, 6), np.random.default_rng(0))
    sug = FixedSuggester([Triple(2, 0, 4), Triple(0, 1, 4)])
    before = (kg.n_edges(), kg.n_retained())
    oracle = enumerate_paths(Triple(0, 2, 4), kg, r, 3, suggester=sug)
    beam = beam_search(Triple(0, 2, 4), kg, r, sug, width=len(oracle), T=3)
    assert [b.key() for b in beam] == [o[1] for o in oracle]
    assert (kg.n_edges(), kg.n_retained()) == before and kg.n_overlay() == 0
    tagged = [b for b in beam if any(p == "suggested" for _, _, p in b.path)]
    assert tagged and all(s is not None for b in tagged for (_, _, p), s in zip(b.path, b.support)
                          if p == "suggested")


def test_reports(tmp_path, kg):
    r = Reasoner(kg.n_entities, kg.n_relations, ReasonerConfig(4, 4, 4, 6), np.random.default_rng(0))
    qs = [Triple(0, 2, 2), Triple(0, 0, 1)]
    ev = evaluate_queries(qs, kg, r, None, 10, 2, keep_beams=True)
    rows = write_report(tmp_path / "r.csv", kg, {55: (qs, ev.ranks), 83: (qs, [1.0, INF])})
    with open(tmp_path / "r.csv", encoding="utf-8") as fh:
        disk = list(csv.DictReader(fh))
    assert [d["seed"] for d in disk] == ["55", "55", "55", "83", "83", "83", "mean", "std"]
    assert disk[3]["relation"] == "ALL" and float(disk[3]["mrr"]) == pytest.approx(0.5)
    assert len(rows) == len(disk)
    write_path_report(tmp_path / "p.txt", qs, ev.beams, kg)
    text = (tmp_path / "p.txt").read_text(encoding="utf-8")
    assert text.startswith("query: a\ts\tc\n") and " -p-> b" in text
