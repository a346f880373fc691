"""Sentence corpus grouped into entity-pair bags."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterable

from .errors import DataError, ParseError
from .graph import KnowledgeGraph, Vocabulary

UNK = "<unk>"
NO_RELATION = "NA"


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[int, ...]
    head_pos: int
    tail_pos: int
    pair: tuple[int, int]
    text: str = ""

    def __post_init__(self):
        n = len(self.tokens)
        if self.head_pos == self.tail_pos:
            raise DataError("head_pos and tail_pos must differ")
        if not (0 <= self.head_pos < n and 0 <= self.tail_pos < n):
            raise DataError(f"entity positions ({self.head_pos}, {self.tail_pos}) outside {n} tokens")


@dataclass(frozen=True)
class SentenceBag:
    pair: tuple[int, int]
    sentences: tuple[Sentence, ...]

    def __post_init__(self):
        if not self.sentences:
            raise DataError("empty sentence bag")
        if any(s.pair != self.pair for s in self.sentences):
            raise DataError("bag holds a sentence with a different pair label")


class Corpus:
    def __init__(self, bags: dict[tuple[int, int], SentenceBag], word_vocab: Vocabulary):
        self.bags = bags
        self.word_vocab = word_vocab
        self.subject_index: dict[int, list[tuple[int, int]]] = {}
        for key in sorted(bags):
            self.subject_index.setdefault(key[0], []).append(key)

    def __len__(self) -> int:
        return len(self.bags)

    def n_sentences(self) -> int:
        return sum(len(b.sentences) for b in self.bags.values())


def _clip(tokens: list[str], head: int, tail: int, max_len: int) -> tuple[list[str], int, int]:
    if len(tokens) <= max_len:
        return tokens, head, tail
    lo, hi = min(head, tail), max(head, tail)
    if hi - lo + 1 <= max_len:
        start = max(0, min(lo - (max_len - (hi - lo + 1)) // 2, len(tokens) - max_len))
        return tokens[start:start + max_len], head - start, tail - start
    # mentions further apart than the window: keep both mention tokens
    # with the tokens immediately following the head
    keep = list(range(lo, lo + max_len - 1)) + [hi]
    new = [tokens[i] for i in keep]
    return new, keep.index(head), keep.index(tail)


def load_corpus(path: str | os.PathLike, kg: KnowledgeGraph, max_len: int = 120,
                word_vocab: Vocabulary | None = None) -> Corpus:
    """Read JSON-lines sentence records into bags keyed by (head, tail).

    With ``word_vocab`` given (an inference corpus), unseen words map to
    the unknown token instead of extending the vocabulary.
    """
    def records():
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    yield lineno, json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None

    return build_corpus(records(), kg, max_len, word_vocab)


def corpus_from_records(records: Iterable[dict], kg: KnowledgeGraph, max_len: int = 120,
                        word_vocab: Vocabulary | None = None) -> Corpus:
    """Same as :func:`load_corpus` for records already in memory."""
    return build_corpus(enumerate(records, 1), kg, max_len, word_vocab)


def build_corpus(numbered: Iterable[tuple[int, dict]], kg: KnowledgeGraph, max_len: int,
                 word_vocab: Vocabulary | None) -> Corpus:
    frozen = word_vocab is not None
    vocab = word_vocab if frozen else Vocabulary([UNK])
    unk = vocab.id(UNK)
    grouped: dict[tuple[int, int], list[Sentence]] = {}
    for lineno, rec in numbered:
        if not isinstance(rec, dict):
            raise ParseError("record must be a JSON object", lineno)
        for key in ("sentence", "head", "tail", "head_pos", "tail_pos"):
            if key not in rec:
                raise ParseError(f"missing field {key!r}", lineno)
        h = kg.entities.get(rec["head"])
        t = kg.entities.get(rec["tail"])
        if h is None or t is None:
            bad = rec["head"] if h is None else rec["tail"]
            raise DataError(f"line {lineno}: entity {bad!r} not in graph vocabulary")
        tokens = rec["sentence"].split()
        try:
            hp, tp = int(rec["head_pos"]), int(rec["tail_pos"])
        except (TypeError, ValueError):
            raise ParseError("positions must be integers", lineno) from None
        if not (0 <= hp < len(tokens) and 0 <= tp < len(tokens)) or hp == tp:
            raise ParseError(f"bad entity positions ({hp}, {tp}) for {len(tokens)} tokens", lineno)
        tokens, hp, tp = _clip(tokens, hp, tp, max_len)
        if frozen:
            ids = tuple(vocab.get(w, unk) for w in tokens)
        else:
            ids = tuple(vocab.add(w) for w in tokens)
        grouped.setdefault((h, t), []).append(Sentence(ids, hp, tp, (h, t), rec["sentence"]))
    bags = {k: SentenceBag(k, tuple(v)) for k, v in grouped.items()}
    return Corpus(bags, vocab)


def write_corpus(path: str | os.PathLike, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def bags_for_subject(corpus: Corpus, e: int) -> list[SentenceBag]:
    """Bags whose pair starts with ``e``, ordered by object id."""
    return [corpus.bags[k] for k in corpus.subject_index.get(e, ())]


def distant_supervision_labels(corpus: Corpus, kg: KnowledgeGraph,
                               na_id: int = -1) -> list[tuple[tuple[int, int], int]]:
    """One (bag, relation) label per graph relation linking the bag's pair.

    Bags with no matching triple get ``na_id``.  Synthesized inverse
    relations never label a bag.
    """
    by_pair: dict[tuple[int, int], list[int]] = {}
    for t in kg.base_triples():
        if kg.has_inverse and kg.is_inverse(t.relation):
            continue
        by_pair.setdefault((t.subject, t.object), []).append(t.relation)
    labels = []
    for key in sorted(corpus.bags):
        rels = by_pair.get(key)
        if rels:
            labels.extend((key, r) for r in sorted(rels))
        else:
            labels.append((key, na_id))
    return labels
