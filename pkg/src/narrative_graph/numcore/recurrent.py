"""Fused LSTM sequence ops over a padded batch.

Running the recurrence as one tape node keeps the Python overhead per step
to a handful of numpy calls; the backward pass is hand-written BPTT.  The two
directions of a bidirectional layer share one loop by stacking them on a
leading axis and using batched matmuls.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor, make_op


def _check(x: Tensor, mask, w_in: Tensor, w_rec: Tensor, bias: Tensor) -> np.ndarray:
    if x.ndim != 3:
        raise DimensionError(f"lstm expects batch x time x features, got {x.shape}")
    batch, steps, width = x.shape
    hidden = w_rec.shape[1]
    if w_in.shape != (4 * hidden, width) or w_rec.shape != (4 * hidden, hidden) or bias.shape != (4 * hidden,):
        raise DimensionError(
            f"lstm weights {w_in.shape}, {w_rec.shape}, {bias.shape} do not match input {x.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (batch, steps):
        raise DimensionError(f"lstm mask shape {mask.shape} != {(batch, steps)}")
    return mask


def _lstm_stack(x: Tensor, mask: np.ndarray, weights: Sequence[tuple[Tensor, Tensor, Tensor]],
                reverse: Sequence[bool]):
    """Run one LSTM per weight triple over the same input.

    Returns the D x B x T x H hidden states, a backward taking a gradient of
    that shape, and the parent tensors in the order the gradients come back.
    """
    batch, steps, width = x.shape
    D = len(weights)
    H = weights[0][1].shape[1]
    full = bool(mask.all())
    # everything below is indexed by loop step k; reversed directions read time T-1-k
    flips = [slice(None, None, -1) if r else slice(None) for r in reverse]
    wi = np.stack([w[0].data for w in weights])                       # D x 4H x W
    wr = np.stack([w[1].data for w in weights])                       # D x 4H x H
    wr_t = np.ascontiguousarray(wr.transpose(0, 2, 1))
    x_tb = np.ascontiguousarray(x.data.transpose(1, 0, 2))            # T x B x W
    xs = np.stack([x_tb[f] for f in flips])                           # D x T x B x W
    proj = xs.reshape(D, steps * batch, width) @ wi.transpose(0, 2, 1)
    proj = (proj + np.stack([w[2].data for w in weights])[:, None, :]).reshape(D, steps, batch, 4 * H)
    proj = np.ascontiguousarray(proj.transpose(1, 0, 2, 3))           # T x D x B x 4H
    m_tb = mask.T[:, :, None].astype(np.float64)
    m_all = np.ascontiguousarray(np.stack([m_tb[f] for f in flips], axis=1))  # T x D x B x 1

    gates = np.empty((steps, D, batch, 3 * H))      # sigmoid gates i, f, o
    cand = np.empty((steps, D, batch, H))           # tanh cell candidate
    tanh_c = np.empty((steps, D, batch, H))
    h_prev = np.empty((steps, D, batch, H))
    c_prev = np.empty((steps, D, batch, H))
    out = np.empty((steps, D, batch, H))
    h = np.zeros((D, batch, H))
    c = np.zeros((D, batch, H))
    for k in range(steps):
        a = proj[k] + h @ wr_t
        s = 0.5 + 0.5 * np.tanh(0.5 * a[..., :3 * H])
        g = np.tanh(a[..., 3 * H:])
        h_prev[k] = h
        c_prev[k] = c
        c_raw = s[..., H:2 * H] * c + s[..., :H] * g
        tc = np.tanh(c_raw)
        h_raw = s[..., 2 * H:] * tc
        gates[k], cand[k], tanh_c[k] = s, g, tc
        if full:
            out[k] = h_raw
            h, c = h_raw, c_raw
        else:
            m = m_all[k]
            out[k] = m * h_raw
            h = h + m * (h_raw - h)
            c = c + m * (c_raw - c)

    def backward(grad_out):
        # grad_out: D x B x T x H -> loop-step order T x D x B x H
        g_t = grad_out.transpose(0, 2, 1, 3)
        grad_k = np.stack([g_t[d][flips[d]] for d in range(D)], axis=1)
        d_a = np.empty((steps, D, batch, 4 * H))
        dh = np.zeros((D, batch, H))
        dc = np.zeros((D, batch, H))
        for k in range(steps - 1, -1, -1):
            s, g, tc = gates[k], cand[k], tanh_c[k]
            i, f, o = s[..., :H], s[..., H:2 * H], s[..., 2 * H:]
            if full:
                dh_raw = dh + grad_k[k]
                dc_raw = dc + dh_raw * o * (1.0 - tc * tc)
            else:
                m = m_all[k]
                dh_raw = m * (dh + grad_k[k])
                dc_raw = m * dc + dh_raw * o * (1.0 - tc * tc)
            da = d_a[k]
            da[..., :H] = dc_raw * g * i * (1.0 - i)
            da[..., H:2 * H] = dc_raw * c_prev[k] * f * (1.0 - f)
            da[..., 2 * H:3 * H] = dh_raw * tc * o * (1.0 - o)
            da[..., 3 * H:] = dc_raw * i * (1.0 - g * g)
            if full:
                dh = da @ wr
                dc = dc_raw * f
            else:
                dh = (1.0 - m) * dh + da @ wr
                dc = (1.0 - m) * dc + dc_raw * f
        flat = np.ascontiguousarray(d_a.transpose(1, 0, 2, 3)).reshape(D, steps * batch, 4 * H)
        hp = np.ascontiguousarray(h_prev.transpose(1, 0, 2, 3)).reshape(D, steps * batch, H)
        d_wr = flat.transpose(0, 2, 1) @ hp
        d_wi = flat.transpose(0, 2, 1) @ xs.reshape(D, steps * batch, width)
        d_b = flat.sum(axis=1)
        dx_k = (flat @ wi).reshape(D, steps, batch, width)
        d_x = sum(dx_k[d][flips[d]] for d in range(D)).transpose(1, 0, 2)
        grads = [d_x]
        for d in range(D):
            grads.extend((d_wi[d], d_wr[d], d_b[d]))
        return tuple(grads)

    result = np.stack([out[:, d][flips[d]] for d in range(D)])       # D x T x B x H
    parents = (x,) + tuple(p for w in weights for p in w)
    return np.ascontiguousarray(result.transpose(0, 2, 1, 3)), backward, parents


def lstm(x: Tensor, mask: np.ndarray, w_in: Tensor, w_rec: Tensor, bias: Tensor, reverse: bool = False) -> Tensor:
    """Run a standard LSTM over ``x`` (batch x time x features).

    ``mask`` (batch x time, boolean) marks valid steps; each row must be a
    contiguous prefix.  Padded steps leave the state untouched and emit zeros,
    so with ``reverse=True`` every sequence starts from its own last valid step.
    Gate order in the stacked weights is input, forget, output, cell.
    Returns the hidden states, shape batch x time x hidden.
    """
    mask = _check(x, mask, w_in, w_rec, bias)
    out, backward, parents = _lstm_stack(x, mask, [(w_in, w_rec, bias)], [reverse])
    return make_op(out[0], parents, lambda g: backward(g[None]))


def bilstm_fused(x: Tensor, mask: np.ndarray, forward: tuple[Tensor, Tensor, Tensor],
                 backward: tuple[Tensor, Tensor, Tensor]) -> Tensor:
    """Forward and reverse LSTMs in a single loop; returns B x T x 2H ([fwd; bwd])."""
    mask = _check(x, mask, *forward)
    _check(x, mask, *backward)
    if forward[1].shape != backward[1].shape:
        raise DimensionError(f"direction hidden sizes differ: {forward[1].shape} vs {backward[1].shape}")
    out, stacked_backward, parents = _lstm_stack(x, mask, [forward, backward], [False, True])
    hidden = out.shape[-1]

    def split_backward(g):
        return stacked_backward(np.stack([g[..., :hidden], g[..., hidden:]]))

    return make_op(np.concatenate([out[0], out[1]], axis=-1), parents, split_backward)
