"""Central-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np

from ..errors import ContractError, ParameterError
from .selection import record_selections, replay_selections
from .tensor import Tensor


def grad_check(scalar_fn: Callable[[], Tensor], params: Iterable[Tensor] | Mapping[str, Tensor],
               epsilon: float = 1e-6, max_elements: int | None = None, seed: int = 0) -> float:
    """Max over elements of |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).

    ``scalar_fn`` recomputes the loss from the current parameter values.
    Random draws and straight-through selections of the first call are
    replayed on every perturbed call, so the finite differences measure the
    documented surrogate.  ``max_elements`` samples that many entries per
    parameter instead of checking all of them.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ParameterError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    tensors = list(params.values()) if isinstance(params, Mapping) else list(params)
    for p in tensors:
        p.zero_grad()
    with record_selections() as trace:
        out = scalar_fn()
    if out.size != 1:
        raise ContractError(f"grad_check needs a scalar output, got shape {out.shape}")
    out.backward()
    rng = np.random.default_rng(seed)

    def evaluate() -> float:
        with replay_selections(trace):
            return float(scalar_fn().data)

    worst = 0.0
    for p in tensors:
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            indices = rng.choice(flat.size, size=max_elements, replace=False)
        for idx in indices:
            orig = flat[idx]
            flat[idx] = orig + epsilon
            f_plus = evaluate()
            flat[idx] = orig - epsilon
            f_minus = evaluate()
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = analytic.reshape(-1)[idx]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
