"""Probability ops and differentiable discrete selection.

The straight-through ops emit exact discrete vectors on the forward pass and
route gradients through a smooth surrogate on the backward pass.  Inside a
``replay_selections`` block the forward value becomes
``hard_recorded + soft(x) - soft_recorded``: it equals the recorded output at
the recording point and its derivative there is the surrogate's, which lets
finite differences check straight-through gradients.  Random draws (Gumbel
noise, dropout masks) are recorded and replayed the same way.
"""

from __future__ import annotations

import contextvars
from contextlib import contextmanager
from typing import Callable

import numpy as np

from ..errors import ContractError, DimensionError, ParameterError
from .tensor import Tensor, as_tensor, make_op

KL_FLOOR = 1e-8


class SelectionTrace:
    """Ordered log of random draws and discrete selections of one forward pass."""

    def __init__(self) -> None:
        self.entries: list[tuple[str, object]] = []
        self.replaying = False
        self._cursor = 0

    def __len__(self) -> int:
        return len(self.entries)

    def _next(self, kind: str):
        if self._cursor >= len(self.entries):
            raise ContractError("replay ran past the recorded trace; the forward pass is not deterministic")
        recorded_kind, value = self.entries[self._cursor]
        if recorded_kind != kind:
            raise ContractError(f"replay expected a {recorded_kind!r} entry, got {kind!r}")
        self._cursor += 1
        return value


_active: contextvars.ContextVar[SelectionTrace | None] = contextvars.ContextVar("selection_trace", default=None)


@contextmanager
def record_selections():
    trace = SelectionTrace()
    token = _active.set(trace)
    try:
        yield trace
    finally:
        _active.reset(token)


@contextmanager
def replay_selections(trace: SelectionTrace):
    trace.replaying = True
    trace._cursor = 0
    token = _active.set(trace)
    try:
        yield trace
    finally:
        _active.reset(token)
        trace.replaying = False


def _trace_draw(kind: str, draw: Callable[[], np.ndarray]) -> np.ndarray:
    trace = _active.get()
    if trace is None:
        return draw()
    if trace.replaying:
        return trace._next(kind)
    value = draw()
    trace.entries.append((kind, value))
    return value


def _trace_selection(kind: str, hard: Callable[[], np.ndarray], soft: np.ndarray) -> np.ndarray:
    """Forward value of a straight-through op under the active trace."""
    trace = _active.get()
    if trace is None:
        return hard()
    if trace.replaying:
        hard_rec, soft_rec = trace._next(kind)
        return hard_rec + (soft - soft_rec)
    value = hard()
    trace.entries.append((kind, (value, soft.copy())))
    return value


# ---------------------------------------------------------------------------
# probability vectors
# ---------------------------------------------------------------------------

def _softmax_np(x: np.ndarray, tau: float, axis: int, mask: np.ndarray | None) -> np.ndarray:
    z = x / tau
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    zmax = np.max(z, axis=axis, keepdims=True)
    if not np.all(np.isfinite(zmax)):
        raise ContractError("softmax over an empty candidate set")
    e = np.exp(z - zmax)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_temp(x, tau: float = 1.0, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Temperature softmax along ``axis``; entries outside ``mask`` get probability 0."""
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    x = as_tensor(x)
    p = _softmax_np(x.data, tau, axis, mask)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)) / tau,)

    return make_op(p, (x,), backward)


def kl_divergence(p, q, floor: float = KL_FLOOR, axis: int = -1, check: bool = True) -> Tensor:
    """KL(p || q) along ``axis`` with 0 ln 0 := 0 and q floored before the log."""
    p, q = as_tensor(p), as_tensor(q)
    if p.shape != q.shape:
        raise DimensionError(f"kl_divergence: shapes differ {p.shape} vs {q.shape}")
    if check:
        for name, t in (("p", p), ("q", q)):
            sums = t.data.sum(axis=axis)
            if np.any(np.abs(sums - 1.0) > 1e-6) or np.any(t.data < 0):
                raise ParameterError(f"kl_divergence: {name} is not a probability vector (sums {sums})")
    support = p.data > 0
    qf = np.maximum(q.data, floor)
    safe_p = np.where(support, p.data, 1.0)
    log_ratio = np.where(support, np.log(safe_p) - np.log(qf), 0.0)
    value = (p.data * log_ratio).sum(axis=axis)

    def backward(g):
        g = np.expand_dims(g, axis) if np.ndim(g) < p.ndim else g
        gp = g * np.where(support, log_ratio + 1.0, 0.0)
        gq = np.where(q.data >= floor, -g * p.data / qf, 0.0)
        return gp, gq

    return make_op(np.asarray(value), (p, q), backward)


# ---------------------------------------------------------------------------
# straight-through selection
# ---------------------------------------------------------------------------

def topk_mask(scores: np.ndarray, k, eligible: np.ndarray | None = None) -> np.ndarray:
    """k-hot rows marking the largest eligible entries; ties go to the lower index."""
    scores = np.atleast_2d(scores)
    if eligible is not None:
        scores = np.where(np.atleast_2d(eligible), scores, -np.inf)
    order = np.argsort(-scores, axis=-1, kind="stable")
    rank = np.empty_like(order)
    rows = np.arange(scores.shape[0])[:, None]
    rank[rows, order] = np.arange(scores.shape[-1])[None, :]
    k = np.broadcast_to(np.asarray(k), (scores.shape[0],))
    return (rank < k[:, None]).astype(np.float64)


def straight_through_topk(p, k, eligible: np.ndarray | None = None) -> Tensor:
    """k-hot forward over the largest entries of ``p``; identity gradient to ``p``.

    ``p`` may be a vector or a matrix (rows selected independently); ``k`` is an
    integer or one integer per row.
    """
    p = as_tensor(p)
    if p.ndim not in (1, 2):
        raise DimensionError(f"straight_through_topk expects 1-D or 2-D input, got {p.shape}")
    rows = 1 if p.ndim == 1 else p.shape[0]
    kk = np.broadcast_to(np.asarray(k), (rows,))
    available = np.full(rows, p.shape[-1]) if eligible is None else np.atleast_2d(eligible).sum(axis=-1)
    if not np.issubdtype(kk.dtype, np.integer) or np.any(kk < 1) or np.any(kk > available):
        raise ParameterError(f"k must lie in [1, {int(np.min(available))}], got {k}")

    def hard():
        return topk_mask(p.data, kk, eligible).reshape(p.shape)

    value = _trace_selection("topk", hard, p.data)
    return make_op(value, (p,), lambda g: (g,))


def gumbel_softmax_st(logits, tau: float, rng: np.random.Generator | None = None, noise: bool = True,
                      mask: np.ndarray | None = None) -> Tensor:
    """One-hot at argmax(logits + Gumbel noise) along the last axis.

    The backward pass is the gradient of ``softmax_temp(logits + noise, tau)``.
    With ``noise=False`` the forward is the plain argmax (evaluation mode).
    Entries outside ``mask`` are never selected.
    """
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    logits = as_tensor(logits)
    if noise:
        if rng is None:
            raise ParameterError("gumbel_softmax_st with noise needs a random generator")
        tiny = np.finfo(np.float64).tiny
        g_noise = _trace_draw("gumbel", lambda: -np.log(-np.log(rng.uniform(tiny, 1.0, size=logits.shape))))
    else:
        g_noise = np.zeros(logits.shape)
    y = logits.data + g_noise
    finite = np.ones(y.shape, dtype=bool) if mask is None else np.broadcast_to(mask, y.shape)
    soft = _softmax_np(y, tau, -1, finite)

    def hard():
        out = np.zeros_like(y)
        np.put_along_axis(out, np.argmax(np.where(finite, y, -np.inf), axis=-1)[..., None], 1.0, axis=-1)
        return out

    value = _trace_selection("gumbel", hard, soft)

    def backward(g):
        return (soft * (g - (g * soft).sum(axis=-1, keepdims=True)) / tau,)

    return make_op(value, (logits,), backward)
