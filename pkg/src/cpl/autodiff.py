"""Minimal reverse-mode differentiation over numpy float64 arrays.

A :class:`Tape` records every operation whose inputs carry that tape, in
execution order.  :meth:`Tape.backward` replays the records in reverse and
accumulates gradients into the :class:`ParameterStore` tensors that were
watched.  Values created without a tape are constants and cost nothing
beyond the numpy call, which is how rollouts run forward-only.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, LifecycleError, NumericError

DTYPE = np.float64


class Var:
    """A value in the computation, optionally tracked by a tape."""

    __slots__ = ("value", "grad", "tape", "name")

    def __init__(self, value, tape: "Tape | None" = None, name: str | None = None):
        self.value = np.asarray(value, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(shape={self.shape}, name={self.name!r})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g


def const(value) -> Var:
    return Var(value)


def _tape_of(*xs: Var) -> "Tape | None":
    for x in xs:
        if x.tape is not None:
            return x.tape
    return None


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value produced by {op}")


class Tape:
    """Records operations so gradients can be pulled back through them."""

    def __init__(self, check_finite: bool = True):
        self.records: list[tuple[Var, tuple[Var, ...], Callable]] = []
        self.watched: dict[str, tuple[Var, "ParameterStore"]] = {}
        self.check_finite = check_finite
        self.consumed = False

    def watch(self, store: "ParameterStore", name: str) -> Var:
        key = f"{id(store)}:{name}"
        if key in self.watched:
            return self.watched[key][0]
        v = Var(store.tensors[name], tape=self, name=name)
        self.watched[key] = (v, store)
        return v

    def record(self, out: Var, parents: tuple[Var, ...], backward: Callable) -> Var:
        if self.consumed:
            raise LifecycleError("tape already consumed by backward()")
        if self.check_finite:
            _check_finite(out.value, "forward")
        out.tape = self
        self.records.append((out, parents, backward))
        return out

    def backward(self, loss: Var, seed: float | np.ndarray = 1.0) -> None:
        """Pull gradients back from ``loss`` and add them to store grads."""
        if self.consumed:
            raise LifecycleError("backward() called twice on the same tape")
        if loss.tape is not self:
            raise LifecycleError("backward() without a recorded forward pass")
        loss.grad = np.broadcast_to(np.asarray(seed, dtype=DTYPE), loss.shape).copy()
        for out, parents, fn in reversed(self.records):
            if out.grad is None:
                continue
            grads = fn(out.grad)
            for p, g in zip(parents, grads):
                if g is None or p.tape is not self:
                    continue
                p._accumulate(g)
        for v, store in self.watched.values():
            if v.grad is not None:
                if self.check_finite:
                    _check_finite(v.grad, f"gradient of {v.name}")
                store.grads[v.name] += v.grad
        self.consumed = True


def _result(value: np.ndarray, parents: tuple[Var, ...], backward: Callable) -> Var:
    tape = _tape_of(*parents)
    out = Var(value)
    if tape is None:
        return out
    return tape.record(out, parents, backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ----------------------------------------------------------------------
# elementwise and linear algebra


def add(a: Var, b: Var) -> Var:
    try:
        val = a.value + b.value
    except ValueError as exc:
        raise DimensionError(f"add: {a.shape} vs {b.shape}") from exc
    return _result(val, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Var, b: Var) -> Var:
    try:
        val = a.value - b.value
    except ValueError as exc:
        raise DimensionError(f"sub: {a.shape} vs {b.shape}") from exc
    return _result(val, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a: Var, b: Var) -> Var:
    try:
        val = a.value * b.value
    except ValueError as exc:
        raise DimensionError(f"mul: {a.shape} vs {b.shape}") from exc
    return _result(
        val,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def scale(a: Var, c: float) -> Var:
    return _result(a.value * c, (a,), lambda g: (g * c,))


def matmul(a: Var, b: Var) -> Var:
    """numpy ``@`` restricted to 1-D and 2-D operands."""
    if a.value.ndim > 2 or b.value.ndim > 2:
        raise DimensionError("matmul supports 1-D and 2-D operands only")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    val = av @ bv

    def backward(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        if av.ndim == 1 and bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        return g @ bv.T, av.T @ g

    return _result(val, (a, b), backward)


def transpose(a: Var) -> Var:
    return _result(a.value.T, (a,), lambda g: (g.T,))


def concat(xs: Sequence[Var], axis: int = 0) -> Var:
    try:
        val = np.concatenate([x.value for x in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[x.shape for x in xs]}") from exc
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(val, tuple(xs), backward)


def stack(xs: Sequence[Var]) -> Var:
    val = np.stack([x.value for x in xs])
    return _result(val, tuple(xs), lambda g: tuple(g[i] for i in range(len(xs))))


def take_rows(table: Var, ids: Sequence[int] | np.ndarray) -> Var:
    """Gather rows of a 2-D table; repeated ids accumulate on backward."""
    idx = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DimensionError(f"row index out of range for table with {n} rows")

    def backward(g):
        full = np.zeros_like(table.value)
        np.add.at(full, idx, g)
        return (full,)

    return _result(table.value[idx], (table,), backward)


def embed_lookup(table: Var, idx: int) -> Var:
    n = table.shape[0]
    if not 0 <= idx < n:
        raise DimensionError(f"embedding id {idx} outside table of {n} rows")

    def backward(g):
        full = np.zeros_like(table.value)
        full[idx] = g
        return (full,)

    return _result(table.value[idx], (table,), backward)


def pick(x: Var, idx: int) -> Var:
    """Scalar element ``x[idx]`` of a vector."""
    if not 0 <= idx < x.shape[0]:
        raise DimensionError(f"index {idx} outside support of size {x.shape[0]}")

    def backward(g):
        full = np.zeros_like(x.value)
        full[idx] = g
        return (full,)

    return _result(x.value[idx], (x,), backward)


def total(x: Var, axis: int | None = None) -> Var:
    val = x.value.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _result(val, (x,), backward)


def affine(W: Var, b: Var | None, x: Var) -> Var:
    """``W @ x + b``."""
    if W.value.ndim != 2 or W.shape[1] != x.shape[-1]:
        raise DimensionError(f"affine: W {W.shape} vs x {x.shape}")
    y = matmul(W, x)
    return y if b is None else add(y, b)


# ----------------------------------------------------------------------
# nonlinearities


def relu(x: Var) -> Var:
    mask = x.value > 0
    return _result(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def tanh(x: Var) -> Var:
    y = np.tanh(x.value)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Var) -> Var:
    v = x.value
    y = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def log_softmax(x: Var) -> Var:
    """Log-sum-exp stabilised log-softmax along the last axis."""
    v = x.value
    shifted = v - v.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)
    return _result(y, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def softmax(x: Var) -> Var:
    v = x.value
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), backward)


def categorical_log_prob(dist: Var, index: int) -> Var:
    """``log dist[index]`` for a probability vector."""
    if not 0 <= index < dist.shape[0]:
        raise DimensionError(f"index {index} outside support of size {dist.shape[0]}")
    p = dist.value[index]
    if p <= 0.0:
        raise NumericError("log of zero probability")

    def backward(g):
        full = np.zeros_like(dist.value)
        full[index] = g / p
        return (full,)

    return _result(np.log(p), (dist,), backward)


def recurrent_step(cell: dict[str, Var], h_prev: Var, c_prev: Var, x: Var) -> tuple[Var, Var]:
    """One LSTM step.  ``cell`` holds ``Wx`` (4H x In), ``Wh`` (4H x H), ``b`` (4H).

    Gate order along the 4H axis: input, forget, candidate, output.
    """
    Wx, Wh, b = cell["Wx"], cell["Wh"], cell["b"]
    H = Wh.shape[1]
    if Wx.shape[0] != 4 * H or h_prev.shape != (H,) or c_prev.shape != (H,):
        raise DimensionError("recurrent_step: inconsistent cell / state shapes")
    z = add(add(matmul(Wx, x), matmul(Wh, h_prev)), b)
    i = sigmoid(slice_(z, 0, H))
    f = sigmoid(slice_(z, H, 2 * H))
    g = tanh(slice_(z, 2 * H, 3 * H))
    o = sigmoid(slice_(z, 3 * H, 4 * H))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def slice_(x: Var, start: int, stop: int) -> Var:
    def backward(g):
        full = np.zeros_like(x.value)
        full[start:stop] = g
        return (full,)

    return _result(x.value[start:stop], (x,), backward)


# ----------------------------------------------------------------------
# sentence-encoder ops


def windows(x: Var, k: int) -> Var:
    """Zero-padded sliding windows: (L, d) -> (L, k*d), centred on each token."""
    L, d = x.shape
    pad = k // 2
    idx = np.arange(L)[:, None] + np.arange(k)[None, :] - pad  # (L, k)
    valid = (idx >= 0) & (idx < L)
    safe = np.clip(idx, 0, max(L - 1, 0))
    out = np.where(valid[:, :, None], x.value[safe], 0.0).reshape(L, k * d)

    def backward(g):
        g3 = g.reshape(L, k, d) * valid[:, :, None]
        full = np.zeros_like(x.value)
        np.add.at(full, safe, g3)
        return (full,)

    return _result(out, (x,), backward)


def piecewise_max_pool(x: Var, p1: int, p2: int) -> Var:
    """Max over rows in segments [0, p1], (p1, p2], (p2, L) -> (3*C,).

    Empty segments contribute zeros and pass no gradient.
    """
    L, C = x.shape
    lo, hi = sorted((p1, p2))
    bounds = [(0, lo + 1), (lo + 1, hi + 1), (hi + 1, L)]
    vals = []
    argmax = []
    for s, e in bounds:
        e = min(e, L)
        if e <= s:
            vals.append(np.zeros(C))
            argmax.append(None)
        else:
            seg = x.value[s:e]
            am = seg.argmax(axis=0) + s
            argmax.append(am)
            vals.append(x.value[am, np.arange(C)])
    out = np.concatenate(vals)

    def backward(g):
        full = np.zeros_like(x.value)
        for j, am in enumerate(argmax):
            if am is None:
                continue
            np.add.at(full, (am, np.arange(C)), g[j * C:(j + 1) * C])
        return (full,)

    return _result(out, (x,), backward)


# ----------------------------------------------------------------------
# parameters and optimisation


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int | None = None) -> np.ndarray:
    fan = fan_in if fan_in is not None else (shape[-1] if len(shape) > 1 else shape[0])
    bound = 1.0 / math.sqrt(max(fan, 1))
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


class ParameterStore:
    """Named float64 tensors with gradient slots and Adam state."""

    def __init__(self):
        self.tensors: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        self.version = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.tensors:
            raise ConfigError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=DTYPE)
        if not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite initial value for {name!r}")
        self.tensors[name] = value
        self.grads[name] = np.zeros_like(value)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def names(self) -> list[str]:
        return list(self.tensors)

    def var(self, name: str, tape: Tape | None) -> Var:
        if tape is None:
            return Var(self.tensors[name], name=name)
        return tape.watch(self, name)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)
        self.version += 1

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.tensors.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            self.tensors[k][...] = v
        self.version += 1

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for k in sorted(self.tensors):
            h.update(k.encode())
            h.update(self.tensors[k].tobytes())
        return h.hexdigest()

    def n_params(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))


def adam_update(store: ParameterStore, lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """One bias-corrected Adam step over every tensor, then clear grads."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    b1, b2 = betas
    store.step += 1
    t = store.step
    for name, theta in store.tensors.items():
        g = store.grads[name]
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta -= lr * m_hat / (np.sqrt(v_hat) + eps)
        if not np.all(np.isfinite(theta)):
            raise NumericError(f"non-finite parameter {name!r} after Adam step")
    store.zero_grad()


# ----------------------------------------------------------------------
# finite-difference checking


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)`` elementwise."""
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(
    loss_fn: Callable[[Tape | None], Var],
    store: ParameterStore,
    names: Iterable[str] | None = None,
    step: float = 1e-3,
    max_coords: int | None = 40,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> float:
    """Largest relative error between tape gradients and central differences.

    ``loss_fn(tape)`` must build a scalar from ``store`` parameters.  When
    ``max_coords`` is set, that many coordinates per tensor are probed.
    """
    names = list(names) if names is not None else store.names()
    store.zero_grad()
    tape = Tape()
    loss = loss_fn(tape)
    tape.backward(loss)
    analytic = {n: store.grads[n].copy() for n in names}
    store.zero_grad()
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name in names:
        theta = store.tensors[name]
        flat = theta.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            old = flat[i]
            flat[i] = old + step
            fp = float(loss_fn(None).value)
            flat[i] = old - step
            fm = float(loss_fn(None).value)
            flat[i] = old
            num = (fp - fm) / (2 * step)
            err = float(relative_error(analytic[name].reshape(-1)[i], num, floor))
            worst = max(worst, err)
    return worst
