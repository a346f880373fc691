"""Planted-pattern synthetic graph + corpus generator.

Each instance is a chain ``x0 -b1-> x1 -b2-> ... -bL-> xL`` for the
pattern body ``b1..bL`` with the target fact ``(x0, r_q, xL)``.  A fraction
of the final (bridging) hops is removed from the graph and survives only
as corpus sentences, which makes the matching queries unanswerable from
the graph alone within ``T`` hops.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import GenerationError
from .graph import KnowledgeGraph, Triple, Vocabulary, add_inverse_edges, bfs_reachable

KG_LABEL = "kg"
CORPUS_LABEL = "corpus"


@dataclass
class PatternSpec:
    n_entities: int = 200
    relations: tuple[str, ...] = ("r_q", "r1", "r2", "r3")
    target: str = "r_q"
    body: tuple[str, ...] = ("r1", "r2")
    corpus_fraction: float = 0.5
    T: int = 3
    distractor_fraction: float = 0.1
    split: tuple[float, float, float] = (0.5, 0.2, 0.3)
    sentences_per_fact: int = 2
    distractor_facts_per_entity: int = 1
    na_bags_per_instance: int = 1
    filler_vocab: int = 30
    max_filler: int = 3
    seed: int = 0


@dataclass
class SyntheticDataset:
    spec: PatternSpec
    entities: Vocabulary
    relations: Vocabulary
    graph: list[Triple]
    corpus: list[dict]
    corpus_facts: list[Triple]
    queries: dict[str, list[tuple[Triple, str]]] = field(default_factory=dict)
    n_bridges: int = 0
    n_moved: int = 0


def _check(spec: PatternSpec) -> None:
    if len(spec.body) > spec.T:
        raise GenerationError(f"pattern needs {len(spec.body)} hops but T = {spec.T}")
    if not spec.body:
        raise GenerationError("pattern body must be nonempty")
    names = set(spec.relations)
    if spec.target not in names or any(b not in names for b in spec.body):
        raise GenerationError("pattern relations must be listed in relations")
    if spec.target in spec.body:
        raise GenerationError("target relation cannot appear in the pattern body")
    if not 0.0 <= spec.corpus_fraction <= 1.0:
        raise GenerationError("corpus_fraction must lie in [0, 1]")
    if abs(sum(spec.split) - 1.0) > 1e-9 or any(s < 0 for s in spec.split):
        raise GenerationError("split fractions must be non-negative and sum to 1")


def _sentence(rng: np.random.Generator, spec: PatternSpec, head: str, tail: str,
              keyword: str | None) -> dict:
    fill = [f"w{int(i)}" for i in rng.integers(0, spec.filler_vocab, size=rng.integers(0, spec.max_filler + 1))]
    middle = list(fill)
    if keyword is not None:
        middle.insert(int(rng.integers(0, len(middle) + 1)), keyword)
    if not middle:
        middle = [f"w{int(rng.integers(0, spec.filler_vocab))}"]
    if rng.random() < 0.5:
        toks = [head] + middle + [tail]
        hp, tp = 0, len(toks) - 1
    else:
        toks = [tail] + middle + [head]
        hp, tp = len(toks) - 1, 0
    return {"sentence": " ".join(toks), "head": head, "tail": tail, "head_pos": hp, "tail_pos": tp}


def generate(spec: PatternSpec) -> SyntheticDataset:
    _check(spec)
    rng = np.random.default_rng(spec.seed)
    L = len(spec.body)
    n_distract = int(round(spec.n_entities * spec.distractor_fraction))
    n_inst = (spec.n_entities - n_distract) // (L + 1)
    if n_inst < 1:
        raise GenerationError("too few entities for one pattern instance")
    entities = Vocabulary(f"e{i}" for i in range(spec.n_entities))
    relations = Vocabulary(spec.relations)
    rid = {name: relations.id(name) for name in spec.relations}
    extra = [rid[r] for r in spec.relations if r != spec.target and r not in spec.body]
    perm = rng.permutation(spec.n_entities)
    chains = [[int(e) for e in perm[i * (L + 1):(i + 1) * (L + 1)]] for i in range(n_inst)]
    pool = [int(e) for e in perm[n_inst * (L + 1):]] or [int(e) for e in perm]

    n_moved = int(round(spec.corpus_fraction * n_inst))
    moved = set(int(i) for i in rng.choice(n_inst, size=n_moved, replace=False))
    # stratified instance split so both query types appear in every partition
    split_of: dict[int, str] = {}
    for group in (sorted(moved), sorted(set(range(n_inst)) - moved)):
        order = [group[i] for i in rng.permutation(len(group))]
        n_tr = int(round(spec.split[0] * len(order)))
        n_va = int(round(spec.split[1] * len(order)))
        for j, inst in enumerate(order):
            split_of[inst] = "train" if j < n_tr else ("valid" if j < n_tr + n_va else "test")

    graph: set[Triple] = set()
    corpus_facts: list[Triple] = []
    sentences: list[dict] = []
    keywords = {r: [f"{r}_kw{i}" for i in range(3)] for r in spec.relations}

    def express(h: int, r: str | None, t: int) -> None:
        for _ in range(spec.sentences_per_fact):
            kw = None if r is None else keywords[r][int(rng.integers(0, 3))]
            sentences.append(_sentence(rng, spec, entities.symbol(h), entities.symbol(t), kw))

    targets = {}
    for i, chain in enumerate(chains):
        for hop, rel in enumerate(spec.body):
            tri = Triple(chain[hop], rid[rel], chain[hop + 1])
            if hop == L - 1 and i in moved:
                corpus_facts.append(tri)
            else:
                graph.add(tri)
            express(tri.subject, rel, tri.object)
        target = Triple(chain[0], rid[spec.target], chain[-1])
        targets[i] = target
        if split_of[i] == "train":
            graph.add(target)
        if extra:
            for node in chain[:-1]:
                d = pool[int(rng.integers(0, len(pool)))]
                r = extra[int(rng.integers(0, len(extra)))]
                tri = Triple(node, r, d)
                graph.add(tri)
                express(node, relations.symbol(r), d)

    # irrelevant corpus facts and relation-free sentences
    banned_pairs = {(t.subject, t.object) for t in graph} | {(t.subject, t.object) for t in corpus_facts}
    chain_end = {c[-1] for c in chains}
    for i, chain in enumerate(chains):
        forbid = {chain[-1]}
        for node in chain[:-1]:
            for _ in range(spec.distractor_facts_per_entity if extra else 0):
                for _attempt in range(50):
                    o = int(rng.integers(0, spec.n_entities))
                    if o != node and o not in forbid and (node, o) not in banned_pairs and o not in chain_end:
                        break
                else:
                    continue
                r = extra[int(rng.integers(0, len(extra)))]
                banned_pairs.add((node, o))
                tri = Triple(node, r, o)
                corpus_facts.append(tri)
                express(node, relations.symbol(r), o)
        for _ in range(spec.na_bags_per_instance):
            for _attempt in range(50):
                o = int(rng.integers(0, spec.n_entities))
                if o != chain[0] and (chain[0], o) not in banned_pairs and o not in chain_end:
                    break
            else:
                continue
            banned_pairs.add((chain[0], o))
            express(chain[0], None, o)

    ds = SyntheticDataset(spec, entities, relations, sorted(graph), sentences, sorted(corpus_facts),
                          n_bridges=n_inst, n_moved=n_moved)
    _label_queries(ds, targets, split_of)
    return ds


def _label_queries(ds: SyntheticDataset, targets: dict[int, Triple], split_of: dict[int, str]) -> None:
    """Label each target query by reachability and verify the construction."""
    spec = ds.spec
    base = KnowledgeGraph.from_triples(ds.graph, ds.entities, ds.relations)
    kg = add_inverse_edges(base)
    corpus_adj: dict[int, list[tuple[int, int]]] = {}
    for t in ds.corpus_facts:
        corpus_adj.setdefault(t.subject, []).append((t.relation, t.object))
        corpus_adj.setdefault(t.object, []).append((kg.inverse_of[t.relation], t.subject))
    ds.queries = {"train": [], "valid": [], "test": []}
    for i in sorted(targets):
        q = targets[i]
        skip = {(q.subject, q.relation, q.object), (q.object, kg.inverse_of[q.relation], q.subject)}

        def kg_edges(e, skip=skip):
            return [(r, t) for r, t in kg.kg_out_edges(e) if (e, r, t) not in skip]

        def all_edges(e, kg_edges=kg_edges):
            return kg_edges(e) + corpus_adj.get(e, [])

        in_kg = q.object in bfs_reachable(kg_edges, q.subject, spec.T)
        in_all = q.object in bfs_reachable(all_edges, q.subject, spec.T)
        if not in_all:
            raise GenerationError(f"query {i} has no path of length <= {spec.T}")
        ds.queries[split_of[i]].append((q, KG_LABEL if in_kg else CORPUS_LABEL))


def write_dataset(ds: SyntheticDataset, out_dir: str | os.PathLike) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "entities": os.path.join(out_dir, "entities.txt"),
        "relations": os.path.join(out_dir, "relations.txt"),
        "graph": os.path.join(out_dir, "graph.txt"),
        "corpus": os.path.join(out_dir, "corpus.jsonl"),
        "corpus_facts": os.path.join(out_dir, "corpus_facts.txt"),
        "train": os.path.join(out_dir, "train.tsv"),
        "valid": os.path.join(out_dir, "valid.tsv"),
        "test": os.path.join(out_dir, "test.tsv"),
        "meta": os.path.join(out_dir, "meta.json"),
    }
    with open(paths["entities"], "w", encoding="utf-8") as fh:
        fh.writelines(e + "\n" for e in ds.entities)
    with open(paths["relations"], "w", encoding="utf-8") as fh:
        fh.writelines(r + "\n" for r in ds.relations)

    def line(t: Triple) -> str:
        return f"{ds.entities.symbol(t.subject)}\t{ds.relations.symbol(t.relation)}\t{ds.entities.symbol(t.object)}"

    with open(paths["graph"], "w", encoding="utf-8") as fh:
        fh.writelines(line(t) + "\n" for t in ds.graph)
    with open(paths["corpus_facts"], "w", encoding="utf-8") as fh:
        fh.writelines(line(t) + "\n" for t in ds.corpus_facts)
    with open(paths["corpus"], "w", encoding="utf-8") as fh:
        fh.writelines(json.dumps(s, sort_keys=True) + "\n" for s in ds.corpus)
    for split in ("train", "valid", "test"):
        with open(paths[split], "w", encoding="utf-8") as fh:
            fh.writelines(f"{line(q)}\t{lab}\n" for q, lab in ds.queries[split])
    meta = {
        "spec": asdict(ds.spec),
        "n_graph_triples": len(ds.graph),
        "n_corpus_facts": len(ds.corpus_facts),
        "n_sentences": len(ds.corpus),
        "n_bridges": ds.n_bridges,
        "n_moved": ds.n_moved,
        "queries": {k: {"n": len(v), "corpus": sum(lab == CORPUS_LABEL for _, lab in v)}
                    for k, v in ds.queries.items()},
    }
    with open(paths["meta"], "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return paths
