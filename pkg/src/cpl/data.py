"""Dataset directory loading: graph, corpus and query splits."""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

from .corpus import Corpus, corpus_from_records, load_corpus
from .errors import DataError
from .graph import (KnowledgeGraph, Triple, Vocabulary, add_inverse_edges, load_queries, load_triples,
                    split_dataset, subsample_train)


@dataclass
class Dataset:
    kg: KnowledgeGraph
    corpus: Corpus | None
    queries: dict[str, list[Triple]] = field(default_factory=dict)
    labels: dict[str, list[str]] = field(default_factory=dict)
    files: dict[str, str] = field(default_factory=dict)

    def subset(self, split: str, label: str) -> list[Triple]:
        return [q for q, lab in zip(self.queries[split], self.labels[split]) if lab == label]


def _vocab_file(path: str) -> Vocabulary | None:
    if not os.path.exists(path):
        return None
    with open(path, encoding="utf-8") as fh:
        return Vocabulary(line.rstrip("\n") for line in fh if line.strip())


def fingerprint(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def load_dataset(data_dir: str | None = None, kg_path: str | None = None, corpus_path: str | None = None,
                 inverse: bool = True, inverse_extracted: bool = True, max_sentence_len: int = 120,
                 eval_relations: list[str] | None = None, ratio: float = 1.0,
                 seed: int = 0) -> Dataset:
    """Load ``graph.txt``, ``corpus.jsonl`` and ``{train,valid,test}.tsv`` from a directory.

    Explicit ``kg_path`` / ``corpus_path`` override the directory defaults.
    Without ``train.tsv`` the graph is split 8:1:1 (valid/test restricted
    to the evaluation relations, all relations when none are given) and
    the remaining evaluation-relation triples become training queries.
    ``ratio < 1`` keeps only that fraction of the graph's triples.
    """
    if data_dir is None and kg_path is None:
        raise DataError("need a data directory or a graph file")
    kg_path = kg_path or os.path.join(data_dir, "graph.txt")
    if corpus_path is None and data_dir is not None and os.path.exists(os.path.join(data_dir, "corpus.jsonl")):
        corpus_path = os.path.join(data_dir, "corpus.jsonl")
    for p in (kg_path, corpus_path):
        if p is not None and not os.path.exists(p):
            raise DataError(f"file not found: {p}")
    base_dir = data_dir or os.path.dirname(kg_path)
    ref = None
    ents = _vocab_file(os.path.join(base_dir, "entities.txt"))
    rels = _vocab_file(os.path.join(base_dir, "relations.txt"))
    if ents is not None or rels is not None:
        ref = KnowledgeGraph(ents or Vocabulary(), rels or Vocabulary())
    kg = load_triples(kg_path, "build", ref, inverse_extracted)
    files = {"graph": kg_path}
    queries: dict[str, list[Triple]] = {}
    labels: dict[str, list[str]] = {}
    for split in ("train", "valid", "test"):
        p = os.path.join(base_dir, f"{split}.tsv")
        if os.path.exists(p):
            loaded = load_queries(p, kg)
            queries[split] = [q for q, _ in loaded]
            labels[split] = [lab for _, lab in loaded]
            files[split] = p
    if "train" not in queries:
        keep = None
        if eval_relations:
            keep = {kg.relations.id(r) for r in eval_relations}
        kg, valid, test = split_dataset(kg, eval_relations=keep, seed=seed)
        queries = {"train": [t for t in kg.triples() if keep is None or t.relation in keep],
                   "valid": valid, "test": test}
        labels = {k: [""] * len(v) for k, v in queries.items()}
    for split in ("valid", "test"):
        queries.setdefault(split, [])
        labels.setdefault(split, [])
    if ratio < 1.0:
        kg = subsample_train(kg, ratio, seed)
    if inverse:
        kg = add_inverse_edges(kg)
    corpus = None
    if corpus_path is not None:
        corpus = load_corpus(corpus_path, kg, max_sentence_len)
        files["corpus"] = corpus_path
    return Dataset(kg, corpus, queries, labels, files)


def dataset_from_synthetic(ds, inverse_extracted: bool = True, max_sentence_len: int = 120) -> Dataset:
    """In-memory equivalent of writing a generated dataset and loading it back."""
    kg = KnowledgeGraph.from_triples(ds.graph, ds.entities.copy(), ds.relations.copy(), inverse_extracted)
    kg = add_inverse_edges(kg)
    corpus = corpus_from_records(ds.corpus, kg, max_sentence_len)
    queries = {k: [q for q, _ in v] for k, v in ds.queries.items()}
    labels = {k: [lab for _, lab in v] for k, v in ds.queries.items()}
    return Dataset(kg, corpus, queries, labels, {})
