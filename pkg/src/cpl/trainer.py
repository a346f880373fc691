"""Joint training of the reasoner and extractor with REINFORCE."""
from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tape, Var
from .config import Config
from .corpus import Corpus
from .errors import LifecycleError
from .evaluation import evaluate_queries
from .extractor import Extractor, ExtractorRecord, extractor_records
from .graph import KnowledgeGraph, Triple
from .reasoner import Reasoner, Trajectory, rollout
from .rng import stream
from .sampling import adaptive_sample  # noqa: F401  re-exported

log = logging.getLogger(__name__)

METRIC_FIELDS = ["epoch", "split", "hits@1", "hits@5", "hits@10", "mrr", "sug_edge/pos_path",
                 "adaptive", "retained"]


class ReplayMemory:
    """Fixed-capacity FIFO buffer with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.items: deque = deque(maxlen=capacity)
        self.inserted = 0

    def push(self, item) -> None:
        self.items.append(item)
        self.inserted += 1

    def extend(self, items) -> None:
        for it in items:
            self.push(it)

    def sample(self, n: int, rng: np.random.Generator) -> list:
        if not self.items:
            return []
        idx = rng.choice(len(self.items), size=min(n, len(self.items)), replace=False)
        return [self.items[int(i)] for i in idx]

    def __len__(self) -> int:
        return len(self.items)


def compute_returns(rewards: Sequence[float], gamma: float) -> list[float]:
    """Discounted suffix sums ``G_t = sum_k gamma^(k-t) r_k``."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    out = [0.0] * len(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = float(rewards[t]) + gamma * acc if gamma else float(rewards[t])
        out[t] = acc
    return out


def accumulate_policy_gradient(tape: Tape, terms: Sequence[tuple[Var, float]]) -> bool:
    """Backpropagate ``-sum G * log pi`` into the stores; zero-return terms are dropped."""
    live = [(lp, g) for lp, g in terms if g != 0.0]
    if not live:
        return False
    if tape.consumed:
        raise LifecycleError("stale tape: already used for a backward pass")
    loss = None
    for lp, g in live:
        if lp.tape is not tape:
            raise LifecycleError("log-prob not recorded on the given tape")
        term = ad.scale(lp, -g)
        loss = term if loss is None else ad.add(loss, term)
    tape.backward(loss)
    return True


def reinforce_update(store: ParameterStore, tape: Tape, terms: Sequence[tuple[Var, float]],
                     lr: float) -> bool:
    """One REINFORCE step; returns False (and leaves parameters untouched) if all returns are zero."""
    if not accumulate_policy_gradient(tape, terms):
        store.zero_grad()
        return False
    ad.adam_update(store, lr)
    return True


# ----------------------------------------------------------------------
# per-agent updates


def reasoner_terms(reasoner: Reasoner, batch: Sequence[Trajectory], gamma: float, tape: Tape,
                   baseline: float = 0.0) -> list[tuple[Var, float]]:
    terms = []
    for traj in batch:
        returns = [g - baseline for g in compute_returns(traj.rewards, gamma)]
        if not any(returns):
            continue
        logps = reasoner.trajectory_log_probs(traj, tape)
        terms.extend((lp, g) for lp, g in zip(logps, returns) if g != 0.0)
    return terms


def update_reasoner(reasoner: Reasoner, batch: Sequence[Trajectory], cfg: Config,
                    baseline: float = 0.0, lr: float | None = None) -> bool:
    tape = Tape()
    return reinforce_update(reasoner.store, tape,
                            reasoner_terms(reasoner, batch, cfg.gamma_reasoner, tape, baseline),
                            cfg.lr if lr is None else lr)


@dataclass
class ScoredRecord:
    record: ExtractorRecord
    ret: float


def score_records(traj: Trajectory, gamma: float) -> list[ScoredRecord]:
    """Attach returns to a trajectory's extractor records.

    A record's own reward counts at its step; later steps contribute their
    step rewards discounted by ``gamma`` (nothing when ``gamma`` is 0).
    """
    recs = extractor_records(traj)
    from .extractor import assign_extractor_rewards

    step_rewards = [r for _, r in assign_extractor_rewards(traj)]
    future = compute_returns(step_rewards, gamma)
    out = []
    i = 0
    for t, s in enumerate(traj.steps):
        tail = gamma * future[t + 1] if (gamma and t + 1 < len(future)) else 0.0
        for _ in s.suggestions:
            rec = recs[i]
            out.append(ScoredRecord(rec, rec.reward + tail))
            i += 1
    return out


def extractor_terms(extractor: Extractor, batch: Sequence[ScoredRecord], tape: Tape) -> list[tuple[Var, float]]:
    by_entity: dict[int, list[ScoredRecord]] = {}
    for sr in batch:
        if sr.ret != 0.0:
            by_entity.setdefault(sr.record.e_t, []).append(sr)
    terms = []
    for e_t in sorted(by_entity):
        cells, logits = extractor.action_table(extractor.state(e_t), tape)
        logp = ad.log_softmax(logits)
        for sr in by_entity[e_t]:
            idx = cells.index((sr.record.bag_key, sr.record.relation_index))
            terms.append((ad.pick(logp, idx), sr.ret))
    return terms


def update_extractor(extractor: Extractor, batch: Sequence[ScoredRecord], cfg: Config) -> bool:
    tape = Tape()
    return reinforce_update(extractor.store, tape, extractor_terms(extractor, batch, tape), cfg.lr)


# ----------------------------------------------------------------------
# pre-training


def pretrain_extractor(extractor: Extractor, labels: Sequence[tuple[tuple[int, int], int]],
                       epochs: int, cfg: Config, rng: np.random.Generator | None = None) -> list[float]:
    """Cross-entropy training on distant-supervision labels; returns mean loss per epoch.

    ``labels`` use KG relation ids, with any id outside the extractor's
    relation set mapped to the no-relation class.
    """
    rng = rng if rng is not None else stream(cfg.seed, "pretrain-extractor")
    data = [(key, extractor.rel_index.get(r, extractor.na)) for key, r in labels]
    curve = []
    for _ in range(epochs):
        order = rng.permutation(len(data))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            chunk = [data[i] for i in order[start:start + cfg.batch_size]]
            tape = Tape()
            loss = None
            for key, cls in chunk:
                term = ad.scale(ad.pick(extractor.labelled_log_probs(extractor.corpus.bags[key], cls, tape), cls),
                                -1.0 / len(chunk))
                loss = term if loss is None else ad.add(loss, term)
            losses.append(float(loss.value) * len(chunk))
            tape.backward(loss)
            ad.adam_update(extractor.store, cfg.pretrain_lr)
        curve.append(sum(losses) / max(len(data), 1))
    return curve


def extractor_accuracy(extractor: Extractor, labels: Sequence[tuple[tuple[int, int], int]]) -> float:
    hits = 0
    for key, r in labels:
        cls = extractor.rel_index.get(r, extractor.na)
        probs = extractor.bag_relation_probs(extractor.corpus.bags[key])
        hits += int(np.argmax(probs) == cls)
    return hits / max(len(labels), 1)


def pretrain_reasoner(reasoner: Reasoner, kg: KnowledgeGraph, queries: Sequence[Triple], epochs: int,
                      cfg: Config, rng: np.random.Generator | None = None) -> list[float]:
    """On-policy REINFORCE on the base graph with no suggestions.

    Returns the training success rate of each epoch.
    """
    rng = rng if rng is not None else stream(cfg.seed, "pretrain-reasoner")
    rates = []
    for _ in range(epochs):
        order = rng.permutation(len(queries))
        succ = 0
        total = 0
        for start in range(0, len(order), cfg.batch_size):
            batch_q = [queries[i] for i in order[start:start + cfg.batch_size]]
            trajs = [rollout(q, kg, reasoner, None, cfg.T, "stochastic", rng,
                             dropout_rate=cfg.dropout_rate, retain=False)
                     for q in batch_q for _ in range(cfg.rollouts_per_query)]
            succ += sum(t.terminal_reward for t in trajs)
            total += len(trajs)
            baseline = succ / total if cfg.use_baseline else 0.0
            update_reasoner(reasoner, trajs, cfg, baseline, cfg.pretrain_lr)
        rates.append(succ / max(total, 1))
    return rates


def success_rate(reasoner: Reasoner, kg: KnowledgeGraph, queries: Sequence[Triple], cfg: Config,
                 extractor: Extractor | None = None, rollouts: int = 10,
                 rng: np.random.Generator | None = None) -> float:
    rng = rng if rng is not None else np.random.default_rng(0)
    hits = 0
    n = 0
    for q in queries:
        for _ in range(rollouts):
            traj = rollout(q, kg, reasoner, extractor, cfg.T, "stochastic", rng, retain=False)
            hits += traj.terminal_reward
            n += 1
    return hits / max(n, 1)


# ----------------------------------------------------------------------
# joint training


@dataclass
class EpochStats:
    epoch: int
    adaptive: bool
    n_trajectories: int = 0
    n_positive: int = 0
    n_positive_suggested: int = 0
    reasoner_updates: int = 0
    extractor_updates: int = 0
    boosted_batches: int = 0

    @property
    def sug_ratio(self) -> float:
        return self.n_positive_suggested / self.n_positive if self.n_positive else 0.0


@dataclass
class TrainResult:
    epochs: list[EpochStats] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_mrr: float = -1.0
    retained: list[Triple] = field(default_factory=list)


def generate_experience(queries: Sequence[Triple], kg: KnowledgeGraph, reasoner: Reasoner,
                        extractor: Extractor | None, cfg: Config, adaptive: bool,
                        rng: np.random.Generator) -> list[Trajectory]:
    mode = "adaptive" if adaptive else "stochastic"
    boost = cfg.boost if adaptive else 0.0
    return [rollout(q, kg, reasoner, extractor, cfg.T, mode, rng, boost=boost,
                    dropout_rate=cfg.dropout_rate, k_suggestions=cfg.k_suggestions, retain=True)
            for q in queries for _ in range(cfg.rollouts_per_query)]


def train(cfg: Config, kg: KnowledgeGraph, reasoner: Reasoner, extractor: Extractor | None,
          train_queries: Sequence[Triple], valid_queries: Sequence[Triple] = (),
          metrics_path=None, rng: np.random.Generator | None = None) -> TrainResult:
    """Alternating joint training.

    Each epoch walks the training queries in batches.  Per batch: roll out
    (boosted while ``epoch < e_a``), store experience in the two replay
    memories, update the reasoner for ``b_r`` batches with the extractor
    frozen, then the extractor for ``b_e`` batches with the reasoner frozen.
    Parameters of the epoch with the best validation MRR are restored at
    the end.
    """
    rng = rng if rng is not None else stream(cfg.seed, "train")
    r_mem = ReplayMemory(cfg.reasoner_capacity)
    e_mem = ReplayMemory(cfg.extractor_capacity)
    result = TrainResult()
    train_extractor = extractor is not None and not cfg.freeze_extractor
    best = None
    fh = writer = None
    if metrics_path is not None:
        fh = open(metrics_path, "w", newline="", encoding="utf-8")
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
    try:
        for epoch in range(cfg.e_m):
            adaptive = epoch < cfg.e_a and extractor is not None
            stats = EpochStats(epoch, adaptive)
            order = rng.permutation(len(train_queries))
            for start in range(0, len(order), cfg.batch_size):
                batch_q = [train_queries[i] for i in order[start:start + cfg.batch_size]]
                trajs = generate_experience(batch_q, kg, reasoner, extractor, cfg, adaptive, rng)
                if adaptive:
                    stats.boosted_batches += 1
                for tr in trajs:
                    stats.n_trajectories += 1
                    if tr.terminal_reward:
                        stats.n_positive += 1
                        stats.n_positive_suggested += int(tr.uses_suggested())
                records = [sr for tr in trajs for sr in score_records(tr, cfg.gamma_extractor)]
                if cfg.use_replay:
                    r_mem.extend(trajs)
                    e_mem.extend(records)
                for _ in range(cfg.b_r):
                    batch = r_mem.sample(cfg.batch_size, rng) if cfg.use_replay else trajs
                    if not batch:
                        log.warning("reasoner replay memory empty; skipping update")
                        continue
                    stats.reasoner_updates += int(update_reasoner(reasoner, batch, cfg))
                if train_extractor:
                    for _ in range(cfg.b_e):
                        batch = e_mem.sample(cfg.batch_size, rng) if cfg.use_replay else records
                        if not batch:
                            log.warning("extractor replay memory empty; skipping update")
                            continue
                        stats.extractor_updates += int(update_extractor(extractor, batch, cfg))
            result.epochs.append(stats)
            row = {"epoch": epoch, "split": "train", "hits@1": "", "hits@5": "", "hits@10": "", "mrr": "",
                   "sug_edge/pos_path": f"{stats.sug_ratio:.6f}", "adaptive": int(adaptive),
                   "retained": len(kg.retained_facts())}
            _emit(result, writer, row)
            if valid_queries and ((epoch + 1) % cfg.eval_every == 0 or epoch == cfg.e_m - 1):
                ev = evaluate_queries(valid_queries, kg, reasoner, extractor, cfg.beam_width, cfg.T,
                                      cfg.k_suggestions)
                m = ev.metrics(cfg.hits_inclusive)
                vrow = {"epoch": epoch, "split": "valid", **{k: f"{v:.6f}" for k, v in m.items()},
                        "sug_edge/pos_path": f"{stats.sug_ratio:.6f}", "adaptive": int(adaptive),
                        "retained": len(kg.retained_facts())}
                _emit(result, writer, vrow)
                if m["mrr"] > result.best_mrr:
                    result.best_mrr = m["mrr"]
                    result.best_epoch = epoch
                    best = (reasoner.store.snapshot(),
                            extractor.store.snapshot() if extractor is not None else None)
            log.info("epoch %d: %d/%d positive, sug ratio %.3f", epoch, stats.n_positive,
                     stats.n_trajectories, stats.sug_ratio)
    finally:
        if fh is not None:
            fh.close()
    if best is not None:
        reasoner.store.restore(best[0])
        if best[1] is not None and train_extractor:
            extractor.store.restore(best[1])
    result.retained = kg.retained_facts()
    return result


def _emit(result: TrainResult, writer, row: dict) -> None:
    result.rows.append(row)
    if writer is not None:
        writer.writerow(row)
