from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpl.errors import ConfigError, DataError, LifecycleError, ParseError, VocabularyError
from cpl.graph import (BASE, OVERLAY, RETAINED, KnowledgeGraph, Triple, Vocabulary, add_inverse_edges,
                       augment_temporary, bfs_reachable, load_queries, load_triples, resolve_episode,
                       split_dataset, subsample_train, write_split)


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_builds_vocabularies_in_first_seen_order(tmp_path):
    p = _write(tmp_path, "g.txt", "x\tr\ty\ny\ts\tz\n\nx\tr\ty\n")
    kg = load_triples(p)
    assert list(kg.entities) == ["x", "y", "z"]
    assert list(kg.relations) == ["r", "s"]
    assert kg.triples() == [Triple(0, 0, 1), Triple(1, 1, 2)]
    assert kg.n_triples() == 2


def test_malformed_line_reports_line_number(tmp_path):
    p = _write(tmp_path, "g.txt", "x\tr\ty\nbroken line\n")
    with pytest.raises(ParseError) as err:
        load_triples(p)
    assert "2" in str(err.value)


def test_reuse_mode_rejects_unknown_symbols(tmp_path):
    ref = load_triples(_write(tmp_path, "a.txt", "x\tr\ty\n"))
    ok = load_triples(_write(tmp_path, "b.txt", "y\tr\tx\n"), "reuse", ref)
    assert ok.triples() == [Triple(1, 0, 0)]
    with pytest.raises(VocabularyError):
        load_triples(_write(tmp_path, "c.txt", "x\tr\tq\n"), "reuse", ref)
    with pytest.raises(ConfigError):
        load_triples(_write(tmp_path, "d.txt", "x\tr\ty\n"), "reuse")


def test_queries_carry_optional_label(tmp_path, kg):
    p = _write(tmp_path, "q.tsv", "a\tp\tb\tcorpus\nb\tq\tc\n")
    assert load_queries(p, kg) == [(Triple(0, 0, 1), "corpus"), (Triple(1, 1, 2), "")]


def test_inverse_edges_double_and_pair_up(kg):
    assert kg.n_triples() == 6
    for t in kg.triples():
        inv = kg.inverse_relation(t.relation)
        assert kg.has_base(Triple(t.object, inv, t.subject))
        assert kg.inverse_relation(inv) == t.relation
        assert kg.is_inverse(inv) and not kg.is_inverse(t.relation)
    with pytest.raises(LifecycleError):
        add_inverse_edges(kg)


def test_inverse_marker_in_input_rejected():
    kg = KnowledgeGraph.from_triples([Triple(0, 0, 1)], Vocabulary(["a", "b"]), Vocabulary(["p__inv"]))
    with pytest.raises(DataError):
        add_inverse_edges(kg)


def test_out_edges_list_base_then_retained_then_overlay(kg):
    kg.add_retained(Triple(0, 1, 4))
    h = augment_temporary(kg, [Triple(0, 0, 4)])
    edges = kg.out_edges(0)
    assert [p for _, _, p in edges] == [BASE, BASE, RETAINED, OVERLAY]
    assert kg.kg_out_edges(0) == sorted([(0, 1), (2, 3), (1, 4)])
    resolve_episode(kg, h, [])
    with pytest.raises(VocabularyError):
        kg.out_edges(99)


def test_augment_then_rollback_restores_graph(kg):
    before = kg.n_edges()
    h = augment_temporary(kg, [Triple(2, 0, 4), Triple(0, 0, 1), Triple(2, 0, 4)])
    assert h.edges == [Triple(2, 0, 4)]
    assert h.skipped == [Triple(0, 0, 1), Triple(2, 0, 4)]
    # overlay edge plus its inverse companion
    assert kg.n_edges() == before + 2
    kept = resolve_episode(kg, h, [])
    assert kept == set()
    assert kg.n_edges() == before and kg.n_overlay() == 0
    with pytest.raises(LifecycleError):
        resolve_episode(kg, h, [])


def test_positive_edges_are_retained_with_companion(kg):
    h = augment_temporary(kg, [Triple(2, 0, 4), Triple(3, 1, 4)])
    kept = resolve_episode(kg, h, [Triple(3, 1, 4)])
    assert kept == {Triple(3, 1, 4)}
    assert kg.has_retained(Triple(3, 1, 4))
    assert kg.has_retained(Triple(4, kg.inverse_relation(1), 3))
    assert not kg.has_edge(Triple(2, 0, 4))
    assert kg.retained_facts() == [Triple(3, 1, 4)]
    assert kg.n_retained() == 2


def test_retained_edge_is_shadowed_not_duplicated(kg):
    kg.add_retained(Triple(3, 1, 4))
    n = kg.n_edges()
    h = augment_temporary(kg, [Triple(3, 1, 4)])
    assert h.shadowed == [Triple(3, 1, 4)] and not h.edges
    assert kg.n_edges() == n
    assert resolve_episode(kg, h, [Triple(3, 1, 4)]) == {Triple(3, 1, 4)}
    assert kg.n_edges() == n


def test_add_retained_ignores_base_edges(kg):
    kg.add_retained(Triple(0, 0, 1))
    assert kg.n_retained() == 0


def test_copy_is_independent(kg):
    other = kg.copy()
    other.add_retained(Triple(2, 0, 4))
    assert kg.n_retained() == 0 and other.n_retained() == 2


def _ring(n):
    ents = Vocabulary(f"e{i}" for i in range(n))
    rels = Vocabulary(["r", "s"])
    triples = [Triple(i, i % 2, (i + 1) % n) for i in range(n)]
    return KnowledgeGraph.from_triples(triples, ents, rels)


def test_split_preserves_union_and_restricts_eval_relations():
    kg = _ring(60)
    train, valid, test = split_dataset(kg, (8, 1, 1), eval_relations=[0], seed=4)
    union = sorted(train.triples() + valid + test)
    assert union == sorted(kg.triples())
    assert all(t.relation == 0 for t in valid + test)
    assert valid and test
    again = split_dataset(kg, (8, 1, 1), eval_relations=[0], seed=4)
    assert again[1] == valid and again[2] == test


def test_split_rejects_bad_input():
    kg = _ring(10)
    with pytest.raises(ConfigError):
        split_dataset(kg, (1, -1, 1))
    with pytest.raises(ConfigError):
        split_dataset(kg, eval_relations=[])


def test_subsample_keeps_requested_fraction():
    kg = _ring(40)
    sub = subsample_train(kg, 0.25, seed=1)
    assert len(sub.triples()) == 10
    assert set(sub.triples()) <= set(kg.triples())
    with pytest.raises(ConfigError):
        subsample_train(kg, 0.0)


def test_write_split_emits_files(tmp_path):
    kg = _ring(20)
    train, valid, test = split_dataset(kg, seed=0)
    write_split(tmp_path, kg, train, valid, test, 0, (8, 1, 1))
    assert {p.name for p in tmp_path.iterdir()} == {"train.txt", "valid.txt", "test.txt", "split.json"}
    reread = load_triples(tmp_path / "train.txt", "reuse", kg)
    assert sorted(reread.triples()) == sorted(train.triples())


def _reference_bfs(adj, start, hops):
    dist = {start: 0}
    q = deque([start])
    while q:
        e = q.popleft()
        if dist[e] == hops:
            continue
        for t in adj.get(e, ()):
            if t not in dist:
                dist[t] = dist[e] + 1
                q.append(t)
    return dist


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)), max_size=30), st.integers(0, 9),
       st.integers(0, 4))
def test_bfs_matches_queue_reference(edges, start, hops):
    adj = {}
    for h, t in edges:
        adj.setdefault(h, []).append(t)
    got = bfs_reachable(lambda e: [(0, t) for t in adj.get(e, ())], start, hops)
    assert got == _reference_bfs(adj, start, hops)


def test_edge_counts_conserved_over_random_episodes(kg):
    rng = np.random.default_rng(0)
    for _ in range(200):
        before_base, before_ret = kg.n_triples(), kg.n_retained()
        cand = [Triple(int(a), int(r), int(b)) for a, r, b in
                zip(rng.integers(0, 5, 3), rng.integers(0, 3, 3), rng.integers(0, 5, 3))]
        h = augment_temporary(kg, cand)
        pos = [t for t in cand if rng.random() < 0.5]
        kept = resolve_episode(kg, h, pos)
        new = [t for t in h.edges if t in kept]
        assert kg.n_overlay() == 0
        assert kg.n_triples() == before_base
        assert kg.n_retained() == before_ret + len(new) + sum(1 for t in new if t in h.companions)
