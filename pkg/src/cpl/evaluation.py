"""Beam-search inference, answer ranking and ranking metrics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import MetricError
from .graph import KnowledgeGraph, Triple
from .reasoner import SUGGESTED, Reasoner, ReasonerState, build_action_space
from .sampling import log_softmax_np

INF = math.inf


@dataclass
class BeamEntry:
    path: list[tuple[int, int, str]]
    log_prob: float
    state: ReasonerState
    support: list = field(default_factory=list)

    @property
    def end(self) -> int:
        return self.state.e_t

    def key(self) -> tuple:
        return tuple((r, e) for r, e, _ in self.path)


@dataclass
class RankResult:
    query: Triple
    candidates: list[tuple[int, float]]
    rank: float


def beam_search(query: Triple, kg: KnowledgeGraph, reasoner: Reasoner, extractor=None,
                width: int = 50, T: int = 3, k_suggestions: int = 5,
                mask_query_edge: bool = False) -> list[BeamEntry]:
    """Keep the ``width`` highest log-prob paths after each of ``T`` expansions.

    Extractor suggestions enter the action space only; the graph is never
    modified.  Ties are broken by the path's (relation, entity) sequence.
    """
    if width < 1:
        raise ValueError("beam width must be at least 1")
    beam = [BeamEntry([], 0.0, reasoner.init_state(query.subject, query.relation))]
    exclude_src = [(query.relation, query.object)] if mask_query_edge else []
    for _ in range(T):
        cands = []
        for bi, entry in enumerate(beam):
            e_t = entry.state.e_t
            exclude = exclude_src if e_t == query.subject else []
            sugg = []
            if extractor is not None:
                sugg = [s for s in extractor.suggest_edges(e_t, k_suggestions, None, "top")
                        if (s.triple.relation, s.triple.object) not in exclude]
            space = build_action_space(kg, [s.triple for s in sugg], e_t, reasoner.no_op,
                                       max_actions=reasoner.cfg.max_actions, exclude=exclude)
            logp = log_softmax_np(reasoner.action_logits(entry.state, space).value)
            by_edge = {(s.triple.relation, s.triple.object): s for s in sugg}
            for i, (r, e, prov) in enumerate(space.actions):
                cands.append((entry.log_prob + float(logp[i]), entry.key() + ((r, e),), bi, (r, e, prov),
                              by_edge.get((r, e)) if prov == SUGGESTED else None))
        cands.sort(key=lambda c: (-c[0], c[1]))
        nxt = []
        for lp, _, bi, act, sup in cands[:width]:
            parent = beam[bi]
            state = reasoner.advance_history(parent.state, act[0], act[1])
            nxt.append(BeamEntry(parent.path + [act], lp, state, parent.support + [sup]))
        beam = nxt
    return beam


def rank_answers(beam: Sequence[BeamEntry], gold: int | None = None,
                 query: Triple | None = None) -> RankResult:
    """Score each end entity by its best path probability; rank gold (inf if absent)."""
    if not beam:
        raise ValueError("empty beam")
    best: dict[int, float] = {}
    for entry in beam:
        p = math.exp(entry.log_prob)
        if p > best.get(entry.end, -1.0):
            best[entry.end] = p
    cands = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    rank = INF
    if gold is not None:
        for i, (e, _) in enumerate(cands):
            if e == gold:
                rank = float(i + 1)
                break
    return RankResult(query, cands, rank)


def hits_at_k(ranks: Sequence[float], k: int, strict: bool = True) -> float:
    """Fraction of ranks below ``k`` (``rank < k``); ``strict=False`` uses ``rank <= k``."""
    if len(ranks) == 0:
        raise MetricError("Hits@K undefined for an empty rank list")
    if strict:
        return sum(1 for r in ranks if r < k) / len(ranks)
    return sum(1 for r in ranks if r <= k) / len(ranks)


def mrr(ranks: Sequence[float]) -> float:
    if len(ranks) == 0:
        raise MetricError("MRR undefined for an empty rank list")
    return sum(0.0 if r == INF else 1.0 / r for r in ranks) / len(ranks)


def metric_row(ranks: Sequence[float], inclusive: bool = False) -> dict[str, float]:
    return {
        "hits@1": hits_at_k(ranks, 1, strict=not inclusive),
        "hits@5": hits_at_k(ranks, 5, strict=not inclusive),
        "hits@10": hits_at_k(ranks, 10, strict=not inclusive),
        "mrr": mrr(ranks),
    }


@dataclass
class EvalResult:
    ranks: list[float]
    results: list[RankResult]
    beams: list[list[BeamEntry]]

    def metrics(self, inclusive: bool = False) -> dict[str, float]:
        return metric_row(self.ranks, inclusive)


def evaluate_queries(queries: Sequence[Triple], kg: KnowledgeGraph, reasoner: Reasoner,
                     extractor=None, width: int = 50, T: int = 3, k_suggestions: int = 5,
                     keep_beams: bool = False) -> EvalResult:
    ranks, results, beams = [], [], []
    for q in queries:
        beam = beam_search(q, kg, reasoner, extractor, width, T, k_suggestions)
        res = rank_answers(beam, q.object, q)
        ranks.append(res.rank)
        results.append(res)
        if keep_beams:
            beams.append(beam)
    return EvalResult(ranks, results, beams)


def aggregate_seeds(runs: Sequence[dict[str, float]]) -> dict[str, tuple[float, float]]:
    """Mean and population standard deviation of each metric across runs."""
    if not runs:
        raise MetricError("no runs to aggregate")
    keys = list(runs[0])
    out = {}
    for k in keys:
        vals = np.array([r[k] for r in runs], dtype=np.float64)
        mean = float(vals.sum() / len(vals))
        out[k] = (mean, float(math.sqrt(((vals - mean) ** 2).sum() / len(vals))))
    return out


def per_relation_ranks(queries: Sequence[Triple], ranks: Sequence[float]) -> dict[int, list[float]]:
    out: dict[int, list[float]] = {}
    for q, r in zip(queries, ranks):
        out.setdefault(q.relation, []).append(r)
    return out


REPORT_FIELDS = ["seed", "relation", "n", "hits@1", "hits@5", "hits@10", "mrr"]


def write_report(path, kg: KnowledgeGraph, per_seed: dict[int, tuple[Sequence[Triple], Sequence[float]]],
                 inclusive: bool = False) -> list[dict]:
    """Per-seed overall and per-relation metrics plus mean/std aggregate rows."""
    rows = []
    overall = []
    for seed in sorted(per_seed):
        queries, ranks = per_seed[seed]
        m = metric_row(ranks, inclusive)
        overall.append(m)
        rows.append({"seed": seed, "relation": "ALL", "n": len(ranks), **m})
        for rel, rr in sorted(per_relation_ranks(queries, ranks).items()):
            rows.append({"seed": seed, "relation": kg.relations.symbol(rel), "n": len(rr),
                         **metric_row(rr, inclusive)})
    agg = aggregate_seeds(overall)
    n = len(per_seed[sorted(per_seed)[0]][1]) if per_seed else 0
    rows.append({"seed": "mean", "relation": "ALL", "n": n, **{k: v[0] for k, v in agg.items()}})
    rows.append({"seed": "std", "relation": "ALL", "n": n, **{k: v[1] for k, v in agg.items()}})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    return rows


def format_path(entry: BeamEntry, query: Triple, kg: KnowledgeGraph, corpus=None) -> str:
    """``e -r-> e'`` chain; suggested hops are tagged and followed by a supporting sentence."""
    n = kg.n_relations
    out = [kg.entities.symbol(query.subject)]
    notes = []
    for (r, e, prov), sup in zip(entry.path, entry.support):
        rel = "NO_OP" if r == n else kg.relations.symbol(r)
        tag = " [corpus]" if prov == SUGGESTED else ""
        out.append(f" -{rel}{tag}-> {kg.entities.symbol(e)}")
        if prov == SUGGESTED and sup is not None and corpus is not None:
            bag = corpus.bags.get(sup.bag_key)
            if bag is not None:
                notes.append(f"    evidence: {bag.sentences[0].text}")
    line = "".join(out) + f"  (p={math.exp(entry.log_prob):.4f})"
    return "\n".join([line] + notes)


def write_path_report(path, queries: Sequence[Triple], beams: Sequence[Sequence[BeamEntry]],
                      kg: KnowledgeGraph, corpus=None, top: int = 5) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q, beam in zip(queries, beams):
            fh.write(f"query: {kg.describe(q)}\n")
            for entry in beam[:top]:
                fh.write("  " + format_path(entry, q, kg, corpus).replace("\n", "\n  ") + "\n")
            fh.write("\n")


def ranks_for(results: Iterable[RankResult]) -> list[float]:
    return [r.rank for r in results]
