"""Knowledge graph with an episode-scoped augmentation overlay.

The base triples are fixed after loading.  Corpus-suggested edges live in
an overlay for the duration of one episode; those that end up on a
successful path are promoted to *retained* status and stay visible for the
rest of the run, everything else is rolled back.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ConfigError, DataError, LifecycleError, ParseError, VocabularyError

INVERSE_SUFFIX = "__inv"

BASE = "base"
RETAINED = "retained"
OVERLAY = "overlay"


class Triple(NamedTuple):
    subject: int
    relation: int
    object: int


class Vocabulary:
    """Bidirectional string <-> dense id map."""

    def __init__(self, symbols: Iterable[str] = ()):
        self._ids: dict[str, int] = {}
        self._symbols: list[str] = []
        for s in symbols:
            self.add(s)

    def add(self, symbol: str) -> int:
        idx = self._ids.get(symbol)
        if idx is None:
            idx = len(self._symbols)
            self._ids[symbol] = idx
            self._symbols.append(symbol)
        return idx

    def id(self, symbol: str) -> int:
        try:
            return self._ids[symbol]
        except KeyError:
            raise VocabularyError(f"unknown symbol {symbol!r}") from None

    def get(self, symbol: str, default: int | None = None) -> int | None:
        return self._ids.get(symbol, default)

    def symbol(self, idx: int) -> str:
        return self._symbols[idx]

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._ids

    def __len__(self) -> int:
        return len(self._symbols)

    def __iter__(self):
        return iter(self._symbols)

    def copy(self) -> "Vocabulary":
        return Vocabulary(self._symbols)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._symbols == other._symbols


@dataclass
class AugmentationHandle:
    """Bookkeeping for one batch of temporarily added edges."""

    edges: list[Triple] = field(default_factory=list)
    skipped: list[Triple] = field(default_factory=list)
    shadowed: list[Triple] = field(default_factory=list)
    companions: dict[Triple, Triple] = field(default_factory=dict)
    resolved: bool = False

    def contains(self, t: Triple) -> bool:
        return t in self.edges or t in self.shadowed


class KnowledgeGraph:
    """Triples over entity/relation vocabularies with per-entity adjacency.

    ``inverse_extracted`` controls whether overlay edges get an inverse
    companion when the graph carries inverse relations.
    """

    def __init__(self, entities: Vocabulary | None = None, relations: Vocabulary | None = None,
                 inverse_extracted: bool = True):
        self.entities = entities if entities is not None else Vocabulary()
        self.relations = relations if relations is not None else Vocabulary()
        self.inverse_of: dict[int, int] = {}
        self.inverse_extracted = inverse_extracted
        self._base: dict[int, set[tuple[int, int]]] = {}
        self._overlay: dict[int, set[tuple[int, int]]] = {}
        self._retained: dict[int, set[tuple[int, int]]] = {}
        self._n_base = 0
        self._forward: list[Triple] = []

    # -- construction ---------------------------------------------------

    def add_base(self, t: Triple) -> bool:
        edges = self._base.setdefault(t.subject, set())
        if (t.relation, t.object) in edges:
            return False
        edges.add((t.relation, t.object))
        self._n_base += 1
        return True

    @classmethod
    def from_triples(cls, triples: Iterable[Triple], entities: Vocabulary, relations: Vocabulary,
                     inverse_extracted: bool = True) -> "KnowledgeGraph":
        kg = cls(entities, relations, inverse_extracted)
        for t in triples:
            if kg.add_base(Triple(*t)):
                kg._forward.append(Triple(*t))
        return kg

    def copy(self) -> "KnowledgeGraph":
        kg = KnowledgeGraph(self.entities, self.relations, self.inverse_extracted)
        kg.inverse_of = dict(self.inverse_of)
        kg._base = {e: set(s) for e, s in self._base.items()}
        kg._overlay = {e: set(s) for e, s in self._overlay.items()}
        kg._retained = {e: set(s) for e, s in self._retained.items()}
        kg._n_base = self._n_base
        kg._forward = list(self._forward)
        return kg

    # -- queries --------------------------------------------------------

    @property
    def has_inverse(self) -> bool:
        return bool(self.inverse_of)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def triples(self) -> list[Triple]:
        """Loaded (forward) triples in file order, excluding synthesized inverses."""
        return list(self._forward)

    def base_triples(self) -> list[Triple]:
        return sorted(Triple(h, r, t) for h, es in self._base.items() for r, t in es)

    def n_triples(self) -> int:
        """Number of base edges (inverses included once added)."""
        return self._n_base

    def n_edges(self) -> int:
        """All visible edges: base, retained and live overlay."""
        return (self._n_base + sum(len(s) for s in self._retained.values())
                + sum(len(s) for s in self._overlay.values()))

    def n_retained(self) -> int:
        return sum(len(s) for s in self._retained.values())

    def n_overlay(self) -> int:
        return sum(len(s) for s in self._overlay.values())

    def retained_triples(self) -> list[Triple]:
        return sorted(Triple(h, r, t) for h, es in self._retained.items() for r, t in es)

    def add_retained(self, t: Triple) -> None:
        """Restore a retained fact (and its inverse companion) saved by an earlier run."""
        t = Triple(*t)
        self._check_entity(t.subject)
        self._check_entity(t.object)
        if self.has_base(t):
            return
        self._retained.setdefault(t.subject, set()).add((t.relation, t.object))
        if self.inverse_extracted and self.has_inverse:
            comp = Triple(t.object, self.inverse_of[t.relation], t.subject)
            if not self.has_base(comp):
                self._retained.setdefault(comp.subject, set()).add((comp.relation, comp.object))

    def retained_facts(self) -> list[Triple]:
        """Retained edges minus their inverse companions."""
        return [t for t in self.retained_triples() if not self.is_inverse(t.relation)]

    def _check_entity(self, e: int) -> None:
        if not 0 <= e < len(self.entities):
            raise VocabularyError(f"entity id {e} out of range")

    def has_base(self, t: Triple) -> bool:
        return (t.relation, t.object) in self._base.get(t.subject, ())

    def has_retained(self, t: Triple) -> bool:
        return (t.relation, t.object) in self._retained.get(t.subject, ())

    def has_overlay(self, t: Triple) -> bool:
        return (t.relation, t.object) in self._overlay.get(t.subject, ())

    def has_edge(self, t: Triple) -> bool:
        return self.has_base(t) or self.has_retained(t) or self.has_overlay(t)

    def out_edges(self, e: int) -> list[tuple[int, int, str]]:
        """Base, then retained, then live overlay out-edges of ``e``; each block sorted."""
        self._check_entity(e)
        out = [(r, t, BASE) for r, t in sorted(self._base.get(e, ()))]
        out += [(r, t, RETAINED) for r, t in sorted(self._retained.get(e, ()))]
        out += [(r, t, OVERLAY) for r, t in sorted(self._overlay.get(e, ()))]
        return out

    def kg_out_edges(self, e: int) -> list[tuple[int, int]]:
        """Edges that count as part of the current graph (base and retained)."""
        self._check_entity(e)
        return sorted(self._base.get(e, set()) | self._retained.get(e, set()))

    def inverse_relation(self, r: int) -> int:
        try:
            return self.inverse_of[r]
        except KeyError:
            raise ConfigError("graph has no inverse relations") from None

    def is_inverse(self, r: int) -> bool:
        return self.relations.symbol(r).endswith(INVERSE_SUFFIX)

    def forward_relations(self) -> list[int]:
        return [i for i, s in enumerate(self.relations) if not s.endswith(INVERSE_SUFFIX)]

    def describe(self, t: Triple) -> str:
        return (f"{self.entities.symbol(t.subject)}\t{self.relations.symbol(t.relation)}"
                f"\t{self.entities.symbol(t.object)}")


# ----------------------------------------------------------------------
# loading and writing


def parse_triple_line(line: str, lineno: int) -> tuple[str, str, str, list[str]]:
    parts = line.rstrip("\n").rstrip("\r").split("\t")
    if len(parts) < 3 or any(not p for p in parts[:3]):
        raise ParseError(f"expected subject<TAB>relation<TAB>object, got {line.strip()!r}", lineno)
    return parts[0], parts[1], parts[2], parts[3:]


def load_triples(path: str | os.PathLike, vocab_mode: str = "build",
                 reference: KnowledgeGraph | None = None,
                 inverse_extracted: bool = True) -> KnowledgeGraph:
    """Read a TAB-separated triple file.

    ``vocab_mode='reuse'`` resolves symbols against ``reference`` and
    raises :class:`VocabularyError` on anything unknown.
    """
    if vocab_mode not in ("build", "reuse"):
        raise ConfigError(f"vocab_mode must be 'build' or 'reuse', got {vocab_mode!r}")
    if vocab_mode == "reuse":
        if reference is None:
            raise ConfigError("vocab_mode='reuse' needs a reference graph")
        entities, relations = reference.entities, reference.relations
    else:
        entities = reference.entities.copy() if reference is not None else Vocabulary()
        relations = reference.relations.copy() if reference is not None else Vocabulary()
    kg = KnowledgeGraph(entities, relations, inverse_extracted)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            h, r, t, _ = parse_triple_line(line, lineno)
            if vocab_mode == "reuse":
                try:
                    tri = Triple(entities.id(h), relations.id(r), entities.id(t))
                except VocabularyError as exc:
                    raise VocabularyError(f"line {lineno}: {exc}") from None
            else:
                tri = Triple(entities.add(h), relations.add(r), entities.add(t))
            if kg.add_base(tri):
                kg._forward.append(tri)
    return kg


def load_queries(path: str | os.PathLike, kg: KnowledgeGraph) -> list[tuple[Triple, str]]:
    """Query file: triple lines with an optional fourth ``label`` column."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            h, r, t, rest = parse_triple_line(line, lineno)
            try:
                tri = Triple(kg.entities.id(h), kg.relations.id(r), kg.entities.id(t))
            except VocabularyError as exc:
                raise VocabularyError(f"line {lineno}: {exc}") from None
            out.append((tri, rest[0] if rest else ""))
    return out


def write_triples(path: str | os.PathLike, kg: KnowledgeGraph, triples: Iterable[Triple],
                  labels: Iterable[str] | None = None) -> None:
    labels = list(labels) if labels is not None else None
    with open(path, "w", encoding="utf-8") as fh:
        for i, t in enumerate(triples):
            line = kg.describe(t)
            if labels is not None and labels[i]:
                line += "\t" + labels[i]
            fh.write(line + "\n")


# ----------------------------------------------------------------------
# structural operations


def add_inverse_edges(kg: KnowledgeGraph) -> KnowledgeGraph:
    """Return a graph where every (h, r, t) also has (t, r__inv, h)."""
    if kg.has_inverse:
        raise LifecycleError("inverse edges already added")
    for name in kg.relations:
        if name.endswith(INVERSE_SUFFIX):
            raise DataError(f"relation {name!r} already carries the inverse marker")
    relations = kg.relations.copy()
    out = KnowledgeGraph(kg.entities, relations, kg.inverse_extracted)
    n = len(kg.relations)
    for r in range(n):
        inv = relations.add(kg.relations.symbol(r) + INVERSE_SUFFIX)
        out.inverse_of[r] = inv
        out.inverse_of[inv] = r
    for t in kg.base_triples():
        out.add_base(t)
        out.add_base(Triple(t.object, out.inverse_of[t.relation], t.subject))
    out._forward = list(kg._forward)
    return out


def augment_temporary(kg: KnowledgeGraph, edges: Iterable[Triple]) -> AugmentationHandle:
    """Make ``edges`` visible as overlay edges until the handle is resolved.

    Edges already in the base graph (or already live) are skipped; edges
    that were retained in an earlier episode are recorded as *shadowed*.
    """
    handle = AugmentationHandle()
    for t in edges:
        t = Triple(*t)
        kg._check_entity(t.subject)
        kg._check_entity(t.object)
        if kg.has_base(t) or kg.has_overlay(t) or t in handle.edges:
            handle.skipped.append(t)
            continue
        if kg.has_retained(t):
            if t not in handle.shadowed:
                handle.shadowed.append(t)
            continue
        kg._overlay.setdefault(t.subject, set()).add((t.relation, t.object))
        handle.edges.append(t)
        if kg.inverse_extracted and kg.has_inverse:
            comp = Triple(t.object, kg.inverse_of[t.relation], t.subject)
            if not kg.has_edge(comp):
                kg._overlay.setdefault(comp.subject, set()).add((comp.relation, comp.object))
                handle.companions[t] = comp
    return handle


def resolve_episode(kg: KnowledgeGraph, handle: AugmentationHandle,
                    positive_edges: Iterable[Triple]) -> set[Triple]:
    """Promote positive overlay edges to retained; roll back the rest.

    Returns the handle's edges that are retained after resolution
    (newly promoted plus shadowed ones confirmed positive).
    """
    if handle.resolved:
        raise LifecycleError("augmentation handle already resolved")
    positive = {Triple(*t) for t in positive_edges}
    kept: set[Triple] = set()
    for t in handle.edges:
        moves = [t] + ([handle.companions[t]] if t in handle.companions else [])
        for m in moves:
            kg._overlay[m.subject].discard((m.relation, m.object))
            if not kg._overlay[m.subject]:
                del kg._overlay[m.subject]
            if t in positive:
                kg._retained.setdefault(m.subject, set()).add((m.relation, m.object))
        if t in positive:
            kept.add(t)
    kept.update(t for t in handle.shadowed if t in positive)
    handle.resolved = True
    return kept


def split_dataset(kg: KnowledgeGraph, ratios: tuple[float, float, float] = (8, 1, 1),
                  eval_relations: Iterable[int] | None = None, seed: int = 0
                  ) -> tuple[KnowledgeGraph, list[Triple], list[Triple]]:
    """Random train/valid/test partition of the forward triples.

    Valid and test keep only ``eval_relations`` triples; the others drawn
    into those partitions go back to train so the union is preserved.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ConfigError(f"invalid split ratios {ratios}")
    triples = kg.triples()
    if eval_relations is None:
        eval_set = set(range(len(kg.relations)))
    else:
        eval_set = set(eval_relations)
        if not eval_set:
            raise ConfigError("eval_relations must be nonempty")
    present = {t.relation for t in triples}
    missing = eval_set - present
    if missing:
        names = sorted(kg.relations.symbol(r) for r in missing)
        raise ConfigError(f"eval relations absent from graph: {names}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(triples))
    total = float(sum(ratios))
    n = len(triples)
    n_train = int(round(n * ratios[0] / total))
    n_valid = int(round(n * ratios[1] / total))
    n_valid = min(n_valid, n - n_train)
    train, valid, test = [], [], []
    for pos, i in enumerate(order):
        t = triples[i]
        if pos < n_train:
            train.append(t)
        elif pos < n_train + n_valid:
            (valid if t.relation in eval_set else train).append(t)
        else:
            (test if t.relation in eval_set else train).append(t)
    train.sort()
    train_kg = KnowledgeGraph.from_triples(train, kg.entities, kg.relations, kg.inverse_extracted)
    return train_kg, sorted(valid), sorted(test)


def subsample_train(train: KnowledgeGraph, ratio: float, seed: int = 0) -> KnowledgeGraph:
    """Keep ``round(ratio * n)`` forward triples drawn uniformly at random."""
    if not 0 < ratio <= 1:
        raise ConfigError(f"ratio must be in (0, 1], got {ratio}")
    triples = train.triples()
    k = int(round(ratio * len(triples)))
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(triples), size=k, replace=False))
    out = KnowledgeGraph.from_triples([triples[i] for i in keep], train.entities, train.relations,
                                      train.inverse_extracted)
    return out


def write_split(out_dir: str | os.PathLike, kg: KnowledgeGraph, train: KnowledgeGraph,
                valid: list[Triple], test: list[Triple], seed: int,
                ratios: tuple[float, float, float]) -> None:
    """Emit train/valid/test triple files plus a seed-stamped metadata file."""
    import json

    os.makedirs(out_dir, exist_ok=True)
    write_triples(os.path.join(out_dir, "train.txt"), kg, train.triples())
    write_triples(os.path.join(out_dir, "valid.txt"), kg, valid)
    write_triples(os.path.join(out_dir, "test.txt"), kg, test)
    meta = {"seed": seed, "ratios": list(ratios), "n_train": len(train.triples()),
            "n_valid": len(valid), "n_test": len(test)}
    with open(os.path.join(out_dir, "split.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def bfs_reachable(kg_edges, start: int, max_hops: int) -> dict[int, int]:
    """Hop distance from ``start`` for entities within ``max_hops``.

    ``kg_edges(e)`` returns an iterable of (relation, entity) pairs.
    """
    dist = {start: 0}
    frontier = [start]
    for hop in range(1, max_hops + 1):
        nxt = []
        for e in frontier:
            for _, t in kg_edges(e):
                if t not in dist:
                    dist[t] = hop
                    nxt.append(t)
        frontier = nxt
    return dist
