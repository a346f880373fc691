"""Path-reasoning agent: history-encoding policy over the joint action space."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tape, Var
from .graph import BASE, RETAINED, KnowledgeGraph, Triple, augment_temporary, resolve_episode
from .sampling import adaptive_sample, boosted_logits, greedy, log_softmax_np

SUGGESTED = "suggested"


@dataclass
class ReasonerConfig:
    entity_dim: int = 50
    relation_dim: int = 50
    hidden_dim: int = 50
    mlp_dim: int = 50
    max_actions: int = 200


@dataclass
class ReasonerState:
    e_s: int
    r_q: int
    e_t: int
    r_t: int
    h: Var
    c: Var


@dataclass
class JointActionSpace:
    actions: list[tuple[int, int, str]]

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def relations(self) -> np.ndarray:
        return np.fromiter((a[0] for a in self.actions), dtype=np.int64, count=len(self.actions))

    @property
    def entities(self) -> np.ndarray:
        return np.fromiter((a[1] for a in self.actions), dtype=np.int64, count=len(self.actions))

    @property
    def suggested_mask(self) -> np.ndarray:
        return np.array([a[2] == SUGGESTED for a in self.actions], dtype=bool)


@dataclass
class Step:
    e_t: int
    r_t: int
    actions: list[tuple[int, int, str]]
    action: int
    provenance: str
    log_prob: float
    boost: float
    reward: float = 0.0
    suggestions: list = field(default_factory=list)

    @property
    def chosen(self) -> tuple[int, int]:
        r, e, _ = self.actions[self.action]
        return r, e


@dataclass
class Trajectory:
    query: Triple
    steps: list[Step]
    terminal_reward: int = 0
    retained: set = field(default_factory=set)

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]

    def suggested_edges_on_path(self) -> list[tuple[int, Triple]]:
        out = []
        for t, s in enumerate(self.steps):
            if s.provenance == SUGGESTED:
                r, e = s.chosen
                out.append((t, Triple(s.e_t, r, e)))
        return out

    def uses_suggested(self) -> bool:
        return any(s.provenance == SUGGESTED for s in self.steps)


class Suggester(Protocol):
    def suggest_edges(self, e_t: int, k: int, rng: np.random.Generator | None, mode: str): ...


class Reasoner:
    """History LSTM plus a two-layer scorer over stacked [relation, entity] actions.

    Relation table rows ``n_relations`` and ``n_relations + 1`` are the
    self-loop and start tokens.
    """

    def __init__(self, n_entities: int, n_relations: int, cfg: ReasonerConfig | None = None,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg or ReasonerConfig()
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.no_op = n_relations
        self.start = n_relations + 1
        rng = rng if rng is not None else np.random.default_rng(0)
        c = self.cfg
        de, dr, H, M = c.entity_dim, c.relation_dim, c.hidden_dim, c.mlp_dim
        s = self.store = ParameterStore()
        s.add("entity_emb", ad.uniform_init(rng, (n_entities, de)))
        s.add("relation_emb", ad.uniform_init(rng, (n_relations + 2, dr)))
        s.add("lstm_Wx", ad.uniform_init(rng, (4 * H, dr + de), fan_in=H))
        s.add("lstm_Wh", ad.uniform_init(rng, (4 * H, H), fan_in=H))
        s.add("lstm_b", ad.uniform_init(rng, (4 * H,), fan_in=H))
        s.add("W1", ad.uniform_init(rng, (M, de + dr + H)))
        s.add("b1", ad.uniform_init(rng, (M,), fan_in=de + dr + H))
        s.add("W2", ad.uniform_init(rng, (dr + de, M)))

    # -- MDP pieces -----------------------------------------------------

    def init_state(self, e_s: int, r_q: int) -> ReasonerState:
        if not 0 <= e_s < self.n_entities:
            raise ad.DimensionError(f"entity id {e_s} out of range")
        if not 0 <= r_q < self.n_relations:
            raise ad.DimensionError(f"relation id {r_q} out of range")
        H = self.cfg.hidden_dim
        return ReasonerState(e_s, r_q, e_s, self.start, ad.const(np.zeros(H)), ad.const(np.zeros(H)))

    def advance_history(self, state: ReasonerState, relation: int, entity: int,
                        tape: Tape | None = None) -> ReasonerState:
        p = self.store
        x = ad.concat([ad.embed_lookup(p.var("relation_emb", tape), relation),
                       ad.embed_lookup(p.var("entity_emb", tape), entity)])
        cell = {"Wx": p.var("lstm_Wx", tape), "Wh": p.var("lstm_Wh", tape), "b": p.var("lstm_b", tape)}
        h, c = ad.recurrent_step(cell, state.h, state.c, x)
        return ReasonerState(state.e_s, state.r_q, entity, relation, h, c)

    def action_logits(self, state: ReasonerState, space: JointActionSpace,
                      tape: Tape | None = None) -> Var:
        p = self.store
        ent = p.var("entity_emb", tape)
        rel = p.var("relation_emb", tape)
        query = ad.concat([ad.embed_lookup(ent, state.e_s), ad.embed_lookup(rel, state.r_q), state.h])
        hidden = ad.relu(ad.affine(p.var("W1", tape), p.var("b1", tape), query))
        u = ad.matmul(p.var("W2", tape), hidden)
        A = ad.concat([ad.take_rows(rel, space.relations), ad.take_rows(ent, space.entities)], axis=1)
        return ad.matmul(A, u)

    def policy_distribution(self, state: ReasonerState, space: JointActionSpace) -> np.ndarray:
        logits = self.action_logits(state, space).value
        return np.exp(log_softmax_np(logits))

    def log_prob(self, state: ReasonerState, space: JointActionSpace, index: int,
                 boost: float = 0.0, tape: Tape | None = None) -> Var:
        logits = self.action_logits(state, space, tape)
        mask = space.suggested_mask
        if boost and mask.any():
            logits = ad.add(logits, ad.const(boost * mask.astype(np.float64)))
        return ad.pick(ad.log_softmax(logits), index)

    def trajectory_log_probs(self, traj: Trajectory, tape: Tape | None = None) -> list[Var]:
        """Recompute per-step log-probs of a stored trajectory under current parameters."""
        q = traj.query
        state = self.init_state(q.subject, q.relation)
        out = []
        for s in traj.steps:
            space = JointActionSpace(s.actions)
            out.append(self.log_prob(state, space, s.action, s.boost, tape))
            r, e = s.chosen
            state = self.advance_history(state, r, e, tape)
        return out


def build_action_space(kg: KnowledgeGraph, suggestions: Sequence[Triple], e_t: int, no_op: int,
                       dropout_rate: float = 0.0, rng: np.random.Generator | None = None,
                       max_actions: int = 200,
                       exclude: Sequence[tuple[int, int]] = ()) -> JointActionSpace:
    """Union of graph out-edges of ``e_t`` and suggested edges, plus a self-loop.

    Graph edges may be dropped (training only) and are subsampled first when
    the space exceeds ``max_actions``.  A suggestion equal to a base edge is
    kept once as a base action; one equal to a retained edge is credited to
    the suggestion.
    """
    excluded = set(exclude)
    kg_edges = [(r, t) for r, t in kg.kg_out_edges(e_t) if (r, t) not in excluded]
    if dropout_rate > 0.0 and rng is not None and kg_edges:
        keep = rng.random(len(kg_edges)) >= dropout_rate
        kg_edges = [edge for edge, k in zip(kg_edges, keep) if k]
    kg_set = set(kg_edges)
    sugg: list[tuple[int, int]] = []
    forced_base: list[tuple[int, int]] = []
    for tri in suggestions:
        if tri.subject != e_t:
            raise ValueError(f"suggestion {tri} does not leave entity {e_t}")
        edge = (tri.relation, tri.object)
        if edge in excluded or edge in sugg:
            continue
        if kg.has_base(tri):
            if edge not in kg_set and edge not in forced_base:
                forced_base.append(edge)
            continue
        sugg.append(edge)
    sugg_set = set(sugg)
    kg_edges = [e for e in kg_edges if e not in sugg_set] + forced_base
    kg_edges.sort()
    room = max_actions - len(sugg) - 1
    if len(kg_edges) > max(room, 0):
        room = max(room, 0)
        if rng is not None:
            pick = np.sort(rng.choice(len(kg_edges), size=room, replace=False))
        else:
            pick = np.arange(room)
        kg_edges = [kg_edges[i] for i in pick]
    actions = [(r, t, BASE) for r, t in kg_edges]
    actions += [(r, t, SUGGESTED) for r, t in sugg]
    actions.append((no_op, e_t, BASE))
    return JointActionSpace(actions)


def rollout(query: Triple, kg: KnowledgeGraph, reasoner: Reasoner, extractor: Suggester | None,
            T: int, sampling_mode: str = "stochastic", rng: np.random.Generator | None = None,
            boost: float = 0.0, dropout_rate: float = 0.0, k_suggestions: int = 5,
            mask_query_edge: bool = True, retain: bool = True,
            chooser: Callable[[JointActionSpace, int], int] | None = None) -> Trajectory:
    """Walk ``T`` steps from the query subject and score the end point.

    Suggestions are placed in the graph overlay for the episode; at the end
    the suggested edges on a successful path are retained (when ``retain``)
    and the rest rolled back.
    """
    if T < 1:
        raise ValueError("rollout horizon must be at least 1")
    if sampling_mode not in ("stochastic", "greedy", "adaptive"):
        raise ValueError(f"unknown sampling mode {sampling_mode!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    state = reasoner.init_state(query.subject, query.relation)
    exclude_at_source = [(query.relation, query.object)] if mask_query_edge else []
    handles = []
    steps: list[Step] = []
    extract_mode = "top" if sampling_mode == "greedy" else "sample"
    for t in range(T):
        exclude = exclude_at_source if state.e_t == query.subject else []
        suggestions = []
        if extractor is not None:
            suggestions = [s for s in extractor.suggest_edges(state.e_t, k_suggestions, rng, extract_mode)
                           if (s.triple.relation, s.triple.object) not in exclude]
        triples = [s.triple for s in suggestions]
        handles.append(augment_temporary(kg, triples))
        space = build_action_space(kg, triples, state.e_t, reasoner.no_op, dropout_rate, rng,
                                   reasoner.cfg.max_actions, exclude)
        logits = reasoner.action_logits(state, space).value
        applied = boost if sampling_mode == "adaptive" else 0.0
        if chooser is not None:
            idx = chooser(space, t)
            logp = float(log_softmax_np(boosted_logits(logits, space.suggested_mask, applied))[idx])
        elif sampling_mode == "greedy":
            idx, logp = greedy(logits)
        else:
            idx, logp = adaptive_sample(logits, space.suggested_mask, applied, applied != 0.0, rng)
        r, e, prov = space.actions[idx]
        steps.append(Step(state.e_t, state.r_t, space.actions, idx, prov, logp, applied,
                          suggestions=suggestions))
        state = reasoner.advance_history(state, r, e)
    traj = Trajectory(query, steps)
    traj.terminal_reward = int(state.e_t == query.object)
    if steps:
        steps[-1].reward = float(traj.terminal_reward)
    positive = {tri for _, tri in traj.suggested_edges_on_path()} if traj.terminal_reward else set()
    kept: set[Triple] = set()
    for h in handles:
        kept |= resolve_episode(kg, h, positive if retain else ())
    traj.retained = kept
    return traj


def dump_trajectory(traj: Trajectory, kg: KnowledgeGraph, fh) -> None:
    """Debug dump: one JSON line per step."""
    rel_name = _relation_namer(kg)
    for t, s in enumerate(traj.steps):
        r, e = s.chosen
        fh.write(json.dumps({
            "query": kg.describe(traj.query).split("\t"),
            "step": t,
            "from": kg.entities.symbol(s.e_t),
            "relation": rel_name(r),
            "to": kg.entities.symbol(e),
            "provenance": s.provenance,
            "log_prob": s.log_prob,
            "reward": s.reward,
        }) + "\n")


def _relation_namer(kg: KnowledgeGraph):
    n = kg.n_relations

    def name(r: int) -> str:
        if r == n:
            return "NO_OP"
        if r == n + 1:
            return "START"
        return kg.relations.symbol(r)

    return name


def exists_path(kg: KnowledgeGraph, src: int, dst: int, T: int,
                extra: Callable[[int], Sequence[tuple[int, int]]] | None = None,
                exclude: Sequence[Triple] = ()) -> bool:
    """Whether ``dst`` is reachable in at most ``T`` hops (self-loops allowed)."""
    excluded = set(exclude)
    frontier = {src}
    seen = {src}
    for _ in range(T):
        nxt = set()
        for e in frontier:
            edges = list(kg.kg_out_edges(e)) + (list(extra(e)) if extra else [])
            for r, t in edges:
                if Triple(e, r, t) in excluded:
                    continue
                if t not in seen:
                    nxt.add(t)
        seen |= nxt
        frontier = nxt
        if dst in seen:
            return True
    return dst in seen


__all__ = [
    "BASE", "RETAINED", "SUGGESTED", "ReasonerConfig", "ReasonerState", "JointActionSpace",
    "Step", "Trajectory", "Reasoner", "build_action_space", "rollout", "dump_trajectory",
    "exists_path",
]
