"""Randomized finite-difference checks for every differentiable op and both policy networks.

Each check builds a scalar ``sum(w * f(inputs))`` with a fixed random
projection ``w``, so every output coordinate carries gradient.  Inputs
that would sit within a hair of a non-differentiable point (ReLU at 0,
near-ties inside a max-pool segment) are pushed away first, because a
central difference straddling a kink measures nothing useful.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Var

TOLERANCE = 1e-4
FD_STEP = 1e-5
KINK_MARGIN = 1e-3


@dataclass
class CheckResult:
    name: str
    trials: int
    worst: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.worst <= TOLERANCE


def _away_from_zero(x: np.ndarray) -> np.ndarray:
    return np.where(np.abs(x) < KINK_MARGIN, np.sign(x + 1e-12) * (KINK_MARGIN + np.abs(x)), x)


def _projected(out: Var, w: np.ndarray) -> Var:
    return ad.total(ad.mul(out, ad.const(w.reshape(out.value.shape))))


def _op_case(rng: np.random.Generator, name: str):
    """Return (store, forward(store, tape) -> Var) for one randomized instance of op ``name``."""
    s = ParameterStore()
    n, m, k = (int(v) for v in rng.integers(2, 5, size=3))

    def P(key, shape, scale=1.0):
        s.add(key, rng.normal(0.0, scale, size=shape))
        return key

    v = s.var
    if name == "add":
        a, b = P("a", (n, m)), P("b", (m,))
        return s, lambda t: ad.add(v(a, t), v(b, t))
    if name == "sub":
        a, b = P("a", (n, m)), P("b", (n, m))
        return s, lambda t: ad.sub(v(a, t), v(b, t))
    if name == "mul":
        a, b = P("a", (n, m)), P("b", (1, m))
        return s, lambda t: ad.mul(v(a, t), v(b, t))
    if name == "scale":
        a = P("a", (n,))
        c = float(rng.normal())
        return s, lambda t: ad.scale(v(a, t), c)
    if name == "matmul":
        shapes = [((n, m), (m, k)), ((n, m), (m,)), ((m,), (m, k)), ((m,), (m,))][int(rng.integers(0, 4))]
        a, b = P("a", shapes[0]), P("b", shapes[1])
        return s, lambda t: ad.matmul(v(a, t), v(b, t))
    if name == "transpose":
        a = P("a", (n, m))
        return s, lambda t: ad.transpose(v(a, t))
    if name == "concat":
        axis = int(rng.integers(0, 2))
        a = P("a", (n, m))
        b = P("b", (k, m) if axis == 0 else (n, k))
        return s, lambda t: ad.concat([v(a, t), v(b, t)], axis=axis)
    if name == "stack":
        a, b = P("a", (m,)), P("b", (m,))
        return s, lambda t: ad.stack([v(a, t), v(b, t), v(a, t)])
    if name == "take_rows":
        a = P("a", (n, m))
        ids = rng.integers(0, n, size=k + 2)
        return s, lambda t: ad.take_rows(v(a, t), ids)
    if name == "embed_lookup":
        a = P("a", (n, m))
        i = int(rng.integers(0, n))
        return s, lambda t: ad.embed_lookup(v(a, t), i)
    if name == "pick":
        a = P("a", (n,))
        i = int(rng.integers(0, n))
        return s, lambda t: ad.pick(v(a, t), i)
    if name == "total":
        a = P("a", (n, m))
        axis = [None, 0, 1][int(rng.integers(0, 3))]
        return s, lambda t: ad.total(v(a, t), axis=axis)
    if name == "affine":
        W, b, x = P("W", (k, m)), P("b", (k,)), P("x", (m,))
        return s, lambda t: ad.affine(v(W, t), v(b, t), v(x, t))
    if name == "relu":
        s.add("a", _away_from_zero(rng.normal(size=(n, m))))
        return s, lambda t: ad.relu(v("a", t))
    if name == "tanh":
        a = P("a", (n, m))
        return s, lambda t: ad.tanh(v(a, t))
    if name == "sigmoid":
        a = P("a", (n, m), 2.0)
        return s, lambda t: ad.sigmoid(v(a, t))
    if name == "log_softmax":
        a = P("a", (n + 2,), 2.0)
        return s, lambda t: ad.log_softmax(v(a, t))
    if name == "softmax":
        a = P("a", (n, m + 1), 2.0)
        return s, lambda t: ad.softmax(v(a, t))
    if name == "categorical_log_prob":
        a = P("a", (n + 2,))
        i = int(rng.integers(0, n + 2))
        return s, lambda t: ad.categorical_log_prob(ad.softmax(v(a, t)), i)
    if name == "recurrent_step":
        H, D = n, m
        Wx, Wh, b = P("Wx", (4 * H, D), 0.5), P("Wh", (4 * H, H), 0.5), P("b", (4 * H,), 0.5)
        h, c, x = P("h", (H,)), P("c", (H,)), P("x", (D,))

        def f(t):
            cell = {"Wx": v(Wx, t), "Wh": v(Wh, t), "b": v(b, t)}
            h2, c2 = ad.recurrent_step(cell, v(h, t), v(c, t), v(x, t))
            return ad.concat([h2, c2])
        return s, f
    if name == "slice":
        a = P("a", (n + 3,))
        lo = int(rng.integers(0, n + 2))
        hi = int(rng.integers(lo + 1, n + 4))
        return s, lambda t: ad.slice_(v(a, t), lo, hi)
    if name == "windows":
        L = n + 2
        a = P("a", (L, m))
        kw = int(rng.choice([1, 3, 5]))
        return s, lambda t: ad.windows(v(a, t), kw)
    if name == "piecewise_max_pool":
        L = n + 4
        p1, p2 = sorted(int(x) for x in rng.choice(L, size=2, replace=False))
        # distinct values spaced by at least the kink margin in each column
        cols = [rng.permutation(L) * 0.05 + rng.uniform(-1, 1) for _ in range(m)]
        s.add("a", np.stack(cols, axis=1))
        return s, lambda t: ad.piecewise_max_pool(v("a", t), p1, p2)
    raise KeyError(name)


OP_NAMES = ["add", "sub", "mul", "scale", "matmul", "transpose", "concat", "stack", "take_rows",
            "embed_lookup", "pick", "total", "affine", "relu", "tanh", "sigmoid", "log_softmax", "softmax",
            "categorical_log_prob", "recurrent_step", "slice", "windows", "piecewise_max_pool"]


def check_op(name: str, trials: int, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng([seed, OP_NAMES.index(name)])
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(trials):
        store, fwd = _op_case(rng, name)
        shape = fwd(None).value.shape
        w = rng.normal(size=shape)

        def loss(tape, store=store, fwd=fwd, w=w):
            return _projected(fwd(tape), w)

        worst = max(worst, ad.grad_check(loss, store, step=FD_STEP, max_coords=None, rng=rng))
    return CheckResult(name, trials, worst, time.perf_counter() - t0)


# ----------------------------------------------------------------------
# end-to-end policy networks


def _tiny_world(rng: np.random.Generator):
    from .data import dataset_from_synthetic
    from .synthetic import PatternSpec, generate

    spec = PatternSpec(n_entities=16, seed=int(rng.integers(0, 2**31)), sentences_per_fact=1)
    return dataset_from_synthetic(generate(spec), max_sentence_len=12)


def check_reasoner(trials: int, seed: int = 0) -> CheckResult:
    """REINFORCE surrogate over a sampled trajectory, history LSTM included."""
    from .reasoner import Reasoner, ReasonerConfig, rollout

    rng = np.random.default_rng([seed, 1001])
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(trials):
        data = _tiny_world(rng)
        kg = data.kg
        cfg = ReasonerConfig(entity_dim=3, relation_dim=3, hidden_dim=3, mlp_dim=4, max_actions=50)
        r = Reasoner(kg.n_entities, kg.n_relations, cfg, rng)
        q = data.queries["train"][int(rng.integers(0, len(data.queries["train"])))]
        traj = rollout(q, kg, r, None, 3, "stochastic", rng, retain=False)
        weights = rng.normal(size=len(traj.steps))

        def loss(tape, r=r, traj=traj, weights=weights):
            terms = r.trajectory_log_probs(traj, tape)
            out = ad.scale(terms[0], float(weights[0]))
            for lp, wgt in zip(terms[1:], weights[1:]):
                out = ad.add(out, ad.scale(lp, float(wgt)))
            return out

        worst = max(worst, ad.grad_check(loss, r.store, step=FD_STEP, max_coords=8, rng=rng))
    return CheckResult("reasoner-policy", trials, worst, time.perf_counter() - t0)


def check_extractor(trials: int, seed: int = 0) -> CheckResult:
    """Joint (bag, relation) policy log-prob plus the labelled pre-training loss."""
    from .extractor import Extractor, ExtractorConfig

    rng = np.random.default_rng([seed, 1002])
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(trials):
        data = _tiny_world(rng)
        cfg = ExtractorConfig(word_dim=3, pos_dim=2, pos_window=5, kernel=3, n_filters=3, relation_dim=3)
        x = Extractor(data.corpus, data.kg, cfg, rng)
        subjects = sorted(data.corpus.subject_index)
        e = subjects[int(rng.integers(0, len(subjects)))]
        cells, _ = x.action_table(x.state(e))
        key, j = cells[int(rng.integers(0, len(cells)))]
        bag = data.corpus.bags[key]
        label = int(rng.integers(0, x.n_classes))

        def loss(tape, x=x, e=e, key=key, j=j, bag=bag, label=label):
            a = x.action_log_prob(e, key, j, tape)
            b = ad.pick(x.labelled_log_probs(bag, label, tape), label)
            return ad.add(a, ad.scale(b, 0.5))

        worst = max(worst, ad.grad_check(loss, x.store, step=FD_STEP, max_coords=8, rng=rng))
    return CheckResult("extractor-policy", trials, worst, time.perf_counter() - t0)


def run_suite(trials: int = 100, seed: int = 0, ops: list[str] | None = None,
              networks: bool = True) -> list[CheckResult]:
    out = [check_op(name, trials, seed) for name in (ops or OP_NAMES)]
    if networks:
        out.append(check_reasoner(trials, seed))
        out.append(check_extractor(trials, seed))
    return out
