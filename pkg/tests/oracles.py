"""Independent reference implementations used by the unit and acceptance tests."""
import math

from cpl.graph import KnowledgeGraph, Triple, Vocabulary, add_inverse_edges
from cpl.reasoner import Reasoner, ReasonerConfig, build_action_space


def _log_softmax(z):
    m = max(z)
    s = sum(math.exp(v - m) for v in z)
    return [v - m - math.log(s) for v in z]


def enumerate_paths(query, kg, reasoner, T, suggester=None, k=5):
    """Every length-T action sequence with its summed log-prob, sorted like the beam."""
    out = []

    def walk(state, path, lp, depth):
        if depth == T:
            out.append((lp, tuple((r, e) for r, e, _ in path), list(path)))
            return
        sugg = []
        if suggester is not None:
            sugg = [s.triple for s in suggester.suggest_edges(state.e_t, k, None, "top")]
        space = build_action_space(kg, sugg, state.e_t, reasoner.no_op, max_actions=reasoner.cfg.max_actions)
        logp = _log_softmax(list(reasoner.action_logits(state, space).value))
        for i, act in enumerate(space.actions):
            walk(reasoner.advance_history(state, act[0], act[1]), path + [act], lp + logp[i], depth + 1)

    walk(reasoner.init_state(query.subject, query.relation), [], 0.0, 0)
    out.sort(key=lambda c: (-c[0], c[1]))
    return out


def random_world(rng, n_entities=8, n_relations=4, n_edges=12, dims=3):
    ents = Vocabulary(f"n{i}" for i in range(n_entities))
    rels = Vocabulary(f"p{i}" for i in range(n_relations))
    triples = {Triple(int(rng.integers(n_entities)), int(rng.integers(n_relations)), int(rng.integers(n_entities)))
               for _ in range(n_edges)}
    kg = add_inverse_edges(KnowledgeGraph.from_triples(sorted(triples), ents, rels))
    cfg = ReasonerConfig(entity_dim=dims, relation_dim=dims, hidden_dim=dims, mlp_dim=dims + 1)
    reasoner = Reasoner(kg.n_entities, kg.n_relations, cfg, rng)
    # wider spread than the default initialisation so log-probs differ visibly
    for name in reasoner.store.names():
        reasoner.store.tensors[name][...] = rng.normal(0.0, 1.0, reasoner.store.tensors[name].shape)
    q = Triple(int(rng.integers(n_entities)), int(rng.integers(n_relations)), int(rng.integers(n_entities)))
    return kg, reasoner, q


def brute_hits(ranks, k):
    """Hits@K with the strict rank < K convention, infinite ranks never counting."""
    n = 0
    for r in ranks:
        if r != math.inf and r < k:
            n += 1
    return n / len(ranks)


def brute_mrr(ranks):
    total = 0.0
    for r in ranks:
        total += 0.0 if r == math.inf else 1.0 / r
    return total / len(ranks)


def random_ranks(rng, n_max=30):
    n = int(rng.integers(1, n_max))
    vals = rng.integers(1, 25, size=n).astype(float)
    vals[rng.random(n) < 0.15] = math.inf
    return list(vals)


def rank_of_gold(scores: dict, gold):
    """1 + number of candidates scoring above gold, ties broken by id; inf if absent."""
    if gold not in scores:
        return math.inf
    g = scores[gold]
    return 1.0 + sum(1 for e, s in scores.items() if s > g or (s == g and e < gold))

