"""Fact-extraction agent over sentence bags.

Sentences are encoded with a piecewise convolutional network, bags are
summarised with relation-specific selective attention, and each
(bag, relation) cell is scored by a bilinear form between the relation
embedding and the attended bag vector.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tape, Var
from .corpus import Corpus, Sentence, SentenceBag, bags_for_subject
from .graph import KnowledgeGraph, Triple
from .reasoner import SUGGESTED, Trajectory


@dataclass
class ExtractorConfig:
    word_dim: int = 50
    pos_dim: int = 5
    pos_window: int = 30
    kernel: int = 3
    n_filters: int = 230
    relation_dim: int = 50


@dataclass
class ExtractorState:
    e_t: int
    bags: list[SentenceBag]


class ExtractionAction(NamedTuple):
    relation: int
    object: int
    bag_key: tuple[int, int]
    score: float


class Suggestion(NamedTuple):
    triple: Triple
    log_prob: float
    bag_key: tuple[int, int]
    relation_index: int


@dataclass
class BagEncoding:
    attention: Var  # (n_rel, n_sentences)
    attended: Var  # (n_rel, D)
    scores: Var  # (n_rel,) diagonal bilinear scores

    @property
    def relation_probs(self) -> np.ndarray:
        v = self.scores.value
        e = np.exp(v - v.max())
        return e / e.sum()


class Extractor:
    """Extraction policy; relation index ``na`` is the no-relation class."""

    def __init__(self, corpus: Corpus, kg: KnowledgeGraph, cfg: ExtractorConfig | None = None,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg or ExtractorConfig()
        self.corpus = corpus
        self.kg = kg
        self.relations: list[int] = kg.forward_relations()
        self.rel_index = {r: i for i, r in enumerate(self.relations)}
        self.na = len(self.relations)
        self.n_classes = self.na + 1
        rng = rng if rng is not None else np.random.default_rng(0)
        c = self.cfg
        d_in = c.word_dim + 2 * c.pos_dim
        D = 3 * c.n_filters
        s = self.store = ParameterStore()
        s.add("word_emb", ad.uniform_init(rng, (len(corpus.word_vocab), c.word_dim)))
        s.add("pos_head", ad.uniform_init(rng, (2 * c.pos_window + 1, c.pos_dim)))
        s.add("pos_tail", ad.uniform_init(rng, (2 * c.pos_window + 1, c.pos_dim)))
        s.add("conv_W", ad.uniform_init(rng, (c.n_filters, c.kernel * d_in)))
        s.add("conv_b", ad.uniform_init(rng, (c.n_filters,), fan_in=c.kernel * d_in))
        s.add("att_query", ad.uniform_init(rng, (self.n_classes, D)))
        s.add("rel_emb", ad.uniform_init(rng, (self.n_classes, c.relation_dim)))
        s.add("W", ad.uniform_init(rng, (c.relation_dim, D)))
        self._cache: dict[int, tuple[int, list, np.ndarray]] = {}

    @property
    def encoding_dim(self) -> int:
        return 3 * self.cfg.n_filters

    # -- encoders -------------------------------------------------------

    def _positions(self, n: int, anchor: int) -> np.ndarray:
        w = self.cfg.pos_window
        return np.clip(np.arange(n) - anchor, -w, w) + w

    def encode_sentence(self, s: Sentence, tape: Tape | None = None) -> Var:
        p = self.store
        n = len(s.tokens)
        words = ad.take_rows(p.var("word_emb", tape), s.tokens)
        ph = ad.take_rows(p.var("pos_head", tape), self._positions(n, s.head_pos))
        pt = ad.take_rows(p.var("pos_tail", tape), self._positions(n, s.tail_pos))
        x = ad.concat([words, ph, pt], axis=1)
        conv = ad.add(ad.matmul(ad.windows(x, self.cfg.kernel), ad.transpose(p.var("conv_W", tape))),
                      p.var("conv_b", tape))
        return ad.tanh(ad.piecewise_max_pool(conv, s.head_pos, s.tail_pos))

    def _sentence_matrix(self, bag: SentenceBag, tape: Tape | None) -> Var:
        return ad.stack([self.encode_sentence(s, tape) for s in bag.sentences])

    def encode_bag(self, bag: SentenceBag, tape: Tape | None = None) -> BagEncoding:
        p = self.store
        X = self._sentence_matrix(bag, tape)  # (n, D)
        Q = p.var("att_query", tape)  # (R, D)
        alpha = ad.softmax(ad.matmul(Q, ad.transpose(X)))  # (R, n)
        S = ad.matmul(alpha, X)  # (R, D)
        U = ad.matmul(S, ad.transpose(p.var("W", tape)))  # (R, dr)
        scores = ad.total(ad.mul(p.var("rel_emb", tape), U), axis=1)
        return BagEncoding(alpha, S, scores)

    def labelled_log_probs(self, bag: SentenceBag, label: int, tape: Tape | None = None) -> Var:
        """Log-distribution over all classes with ``label`` as the attention query."""
        p = self.store
        X = self._sentence_matrix(bag, tape)
        q = ad.embed_lookup(p.var("att_query", tape), label)
        alpha = ad.softmax(ad.matmul(X, q))
        s = ad.matmul(alpha, X)
        logits = ad.matmul(p.var("rel_emb", tape), ad.matmul(p.var("W", tape), s))
        return ad.log_softmax(logits)

    # -- policy ---------------------------------------------------------

    def state(self, e_t: int) -> ExtractorState:
        return ExtractorState(e_t, bags_for_subject(self.corpus, e_t))

    def action_table(self, state: ExtractorState, tape: Tape | None = None
                     ) -> tuple[list[tuple[tuple[int, int], int]], Var | None]:
        """Flattened (bag, relation) cells, no-relation masked, with their logits."""
        if not state.bags:
            return [], None
        cells = []
        rows = []
        for bag in state.bags:
            enc = self.encode_bag(bag, tape)
            rows.append(ad.slice_(enc.scores, 0, self.na))
            cells.extend((bag.pair, j) for j in range(self.na))
        return cells, ad.concat(rows)

    def _table_np(self, e_t: int) -> tuple[list, np.ndarray]:
        hit = self._cache.get(e_t)
        if hit is not None and hit[0] == self.store.version:
            return hit[1], hit[2]
        cells, logits = self.action_table(self.state(e_t))
        if logits is None:
            logp = np.zeros(0)
        else:
            v = logits.value
            logp = v - v.max() - np.log(np.exp(v - v.max()).sum())
        self._cache[e_t] = (self.store.version, cells, logp)
        return cells, logp

    def clear_cache(self) -> None:
        self._cache.clear()

    def extraction_policy(self, state: ExtractorState) -> list[ExtractionAction]:
        cells, logits = self.action_table(state)
        if not cells:
            return []
        v = logits.value
        probs = np.exp(v - v.max())
        probs /= probs.sum()
        return [ExtractionAction(self.relations[j], key[1], key, float(pr))
                for (key, j), pr in zip(cells, probs)]

    def action_log_prob(self, e_t: int, bag_key: tuple[int, int], relation_index: int,
                        tape: Tape | None = None) -> Var:
        cells, logits = self.action_table(self.state(e_t), tape)
        return ad.pick(ad.log_softmax(logits), cells.index((bag_key, relation_index)))

    def suggest_edges(self, e_t: int, k: int, rng: np.random.Generator | None = None,
                      mode: str = "sample") -> list[Suggestion]:
        """Up to ``k`` edges leaving ``e_t``, at most one per bag.

        ``mode='sample'`` draws cells from the joint (bag, relation)
        distribution without replacement, retiring a bag once one of its
        cells is drawn; ``mode='top'`` does the same greedily.  Recorded
        log-probs are those of the full joint distribution.
        """
        if k < 1:
            raise ValueError("k must be at least 1")
        cells, logp = self._table_np(e_t)
        if not cells:
            return []
        if mode not in ("top", "sample"):
            raise ValueError(f"unknown suggestion mode {mode!r}")
        if mode == "sample" and rng is None:
            raise ValueError("sampling needs an rng")
        bag_ids = {key: b for b, key in enumerate(dict.fromkeys(key for key, _ in cells))}
        bag_of = np.array([bag_ids[key] for key, _ in cells])
        live = np.ones(len(cells), dtype=bool)
        out = []
        while len(out) < k and live.any():
            if mode == "top":
                cand = np.flatnonzero(live)
                i = int(cand[np.argmax(logp[cand])])
            else:
                p = np.where(live, np.exp(logp), 0.0)
                if p.sum() <= 0.0:
                    break
                i = int(rng.choice(len(p), p=p / p.sum()))
            key, j = cells[i]
            out.append(Suggestion(Triple(e_t, self.relations[j], key[1]), float(logp[i]), key, j))
            live &= bag_of != bag_of[i]
        return out

    def bag_relation_probs(self, bag: SentenceBag) -> np.ndarray:
        """Phi(bag): distribution over all classes including no-relation."""
        return self.encode_bag(bag).relation_probs


def assign_extractor_rewards(traj: Trajectory) -> list[tuple[int, float]]:
    """Reward 1 at step t iff the episode succeeded and step t took a suggested edge."""
    out = []
    for t, s in enumerate(traj.steps):
        hit = traj.terminal_reward == 1 and s.provenance == SUGGESTED
        out.append((t, 1.0 if hit else 0.0))
    return out


@dataclass
class ExtractorRecord:
    """One suggestion made during a rollout and the reward it earned."""

    e_t: int
    bag_key: tuple[int, int]
    relation_index: int
    log_prob: float
    reward: float


def extractor_records(traj: Trajectory) -> list[ExtractorRecord]:
    rewards = dict(assign_extractor_rewards(traj))
    out = []
    for t, s in enumerate(traj.steps):
        chosen = Triple(s.e_t, *s.chosen)
        for sug in s.suggestions:
            r = rewards[t] if sug.triple == chosen else 0.0
            out.append(ExtractorRecord(s.e_t, sug.bag_key, sug.relation_index, sug.log_prob, r))
    return out


def dump_suggestions(records: Sequence[ExtractorRecord], extractor: Extractor, fh) -> None:
    kg = extractor.kg
    for rec in records:
        fh.write(json.dumps({
            "bag": [kg.entities.symbol(rec.bag_key[0]), kg.entities.symbol(rec.bag_key[1])],
            "relation": kg.relations.symbol(extractor.relations[rec.relation_index]),
            "score": float(np.exp(rec.log_prob)),
            "reward": rec.reward,
        }) + "\n")
