"""Two-Step baseline: extract once, freeze the extractions into the graph, train the reasoner alone."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import Config
from .evaluation import evaluate_queries
from .extractor import Extractor
from .graph import KnowledgeGraph, Triple
from .reasoner import Reasoner


def two_step_augment(kg: KnowledgeGraph, extractor: Extractor, threshold: float
                     ) -> tuple[KnowledgeGraph, list[Triple]]:
    """Copy of ``kg`` with each bag's best relational prediction above ``threshold`` added as a base edge.

    Every bag proposes its most probable class other than no-relation,
    scored by that class's probability, so a threshold of 0 adds one edge
    per bag.  Predictions already present in the graph are not counted.
    Inverse companions are added alongside when the graph carries inverses.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    out = kg.copy()
    added = []
    for key in sorted(extractor.corpus.bags):
        probs = extractor.bag_relation_probs(extractor.corpus.bags[key]).copy()
        probs[extractor.na] = -1.0
        j = int(np.argmax(probs))
        if not probs[j] > threshold:
            continue
        t = Triple(key[0], extractor.relations[j], key[1])
        if out.has_edge(t):
            continue
        out.add_base(t)
        if out.has_inverse:
            out.add_base(Triple(t.object, out.inverse_of[t.relation], t.subject))
        added.append(t)
    return out, added


@dataclass
class TwoStepRun:
    threshold: float
    edges_added: int
    valid_metrics: dict[str, float]
    kg: KnowledgeGraph
    reasoner: Reasoner


@dataclass
class TwoStepResult:
    best: TwoStepRun
    runs: list[TwoStepRun] = field(default_factory=list)

    @property
    def edges_added(self) -> int:
        return self.best.edges_added


def two_step_baseline(cfg: Config, kg: KnowledgeGraph, extractor: Extractor, thresholds: Sequence[float],
                      valid_queries: Sequence[Triple],
                      train_reasoner: Callable[[KnowledgeGraph], Reasoner]) -> TwoStepResult:
    """Run the baseline at every threshold and keep the best one by validation MRR.

    ``train_reasoner`` receives the augmented graph and returns a reasoner
    trained on it with no extractor (pre-training plus joint-loop epochs
    in reasoner-only mode, as the caller sees fit).  Ties on MRR go to the
    earlier threshold in ``thresholds``.
    """
    if not thresholds:
        raise ValueError("need at least one threshold")
    runs = []
    for th in thresholds:
        aug, added = two_step_augment(kg, extractor, th)
        reasoner = train_reasoner(aug)
        ev = evaluate_queries(valid_queries, aug, reasoner, None, cfg.beam_width, cfg.T, cfg.k_suggestions)
        runs.append(TwoStepRun(th, len(added), ev.metrics(cfg.hits_inclusive) if valid_queries else {}, aug,
                               reasoner))
    best = max(runs, key=lambda r: r.valid_metrics.get("mrr", 0.0)) if valid_queries else runs[0]
    return TwoStepResult(best, runs)
