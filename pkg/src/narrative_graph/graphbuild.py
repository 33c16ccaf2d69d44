"""Dense scene graph construction and learned sparsification.

Orientation: ``E[i, j]`` is the similarity e_ij and column ``j`` of the
neighbour matrix ``P`` is anchor scene j's distribution over candidate
scenes i != j.  Selection works on rows, so internally the anchor-major
matrix ``P.T`` is used.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ContractError, DimensionError, NumericError
from .numcore import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SparseGraph:
    neighbor_sets: tuple[frozenset[int], ...]
    neighborhood_sizes: tuple[int, ...]

    def __post_init__(self):
        n = len(self.neighbor_sets)
        for i, (nbrs, k) in enumerate(zip(self.neighbor_sets, self.neighborhood_sizes)):
            if len(nbrs) != k or i in nbrs or any(not 0 <= j < n for j in nbrs):
                raise ContractError(f"scene {i}: invalid neighbour set {sorted(nbrs)} for size {k}")

    @property
    def n(self) -> int:
        return len(self.neighbor_sets)

    @property
    def edge_count(self) -> int:
        return sum(self.neighborhood_sizes)

    def edges(self) -> list[tuple[int, int]]:
        return [(i, j) for i, nbrs in enumerate(self.neighbor_sets) for j in sorted(nbrs)]

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges():
            a[i, j] = 1.0
        return a

    @classmethod
    def from_adjacency(cls, adjacency: np.ndarray) -> "SparseGraph":
        rows = [frozenset(np.flatnonzero(row > 0.5).tolist()) for row in np.asarray(adjacency)]
        return cls(tuple(rows), tuple(len(r) for r in rows))


def init_similarity_params(d_v: int, d_sim: int, rng: np.random.Generator) -> dict[str, Tensor]:
    return {
        "sim.w_i": nc.uniform_parameter((d_v, d_sim), d_v, rng, "sim.w_i"),
        "sim.b_i": nc.zeros_parameter((d_sim,), "sim.b_i"),
        "sim.w_j": nc.uniform_parameter((d_v, d_sim), d_v, rng, "sim.w_j"),
        "sim.b_j": nc.zeros_parameter((d_sim,), "sim.b_j"),
        "sim.b_e": nc.zeros_parameter((1, 1), "sim.b_e"),
    }


def init_size_params(input_width: int, hidden: int, max_size: int, rng: np.random.Generator) -> dict[str, Tensor]:
    return {
        "size.w1": nc.uniform_parameter((input_width, hidden), input_width, rng, "size.w1"),
        "size.b1": nc.zeros_parameter((hidden,), "size.b1"),
        "size.w2": nc.uniform_parameter((hidden, max_size), hidden, rng, "size.w2"),
        "size.b2": nc.zeros_parameter((max_size,), "size.b2"),
    }


def pairwise_similarity(v: Tensor, u: Tensor | np.ndarray | None, params: dict[str, Tensor]) -> Tensor:
    """e_ij = u_ij * tanh(W_i v_i + b_i) . tanh(W_j v_j + b_j) + b_e.

    ``u=None`` is the text-only mode and uses u_ij = 1 through the same path.
    """
    n = v.shape[0]
    if u is None:
        u = np.ones((n, n))
    u = nc.as_tensor(u)
    if u.shape != (n, n):
        raise DimensionError(f"audiovisual similarity has shape {u.shape}, expected {(n, n)}")
    left = nc.tanh(v @ params["sim.w_i"] + params["sim.b_i"])
    right = nc.tanh(v @ params["sim.w_j"] + params["sim.b_j"])
    try:
        return u * (left @ nc.transpose(right)) + params["sim.b_e"]
    except NumericError:
        raw = u.data * (left.data @ right.data.T) + params["sim.b_e"].data
        i, j = np.argwhere(~np.isfinite(raw))[0]
        raise NumericError(f"non-finite similarity at pair ({i}, {j})") from None


def candidate_mask(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


def neighbor_distributions(e: Tensor, tau: float) -> Tensor:
    """Column j: softmax over candidate scenes i != j of e_ij / tau."""
    n = e.shape[0]
    if n < 2:
        raise ContractError("a graph with a single scene has no neighbour candidates")
    return nc.softmax_temp(e, tau, axis=0, mask=candidate_mask(n))


def _resize_candidates(rows: Tensor, width: int) -> Tensor:
    """Drop the self entry of every row, then right-pad with zeros or subsample to ``width``."""
    n = rows.shape[0]
    j = np.arange(n - 1)[None, :]
    cols = j + (j >= np.arange(n)[:, None])
    if n - 1 > width:
        cols = cols[:, np.rint(np.linspace(0, n - 2, width)).astype(int)]
    gathered = rows[np.arange(n)[:, None], cols]
    if gathered.shape[1] < width:
        gathered = nc.concat([gathered, Tensor(np.zeros((n, width - gathered.shape[1])))], axis=1)
    return gathered


@dataclass
class SizePrediction:
    z: Tensor            # N x C probabilities over sizes 1..C
    onehot: Tensor       # N x C straight-through one-hot of the chosen size
    sizes: np.ndarray    # chosen k_i


def predict_neighborhood_size(p: Tensor, params: dict[str, Tensor], tau: float, training: bool,
                              rng: np.random.Generator | None = None) -> SizePrediction:
    """Distribution z_i over sizes 1..C from each scene's candidate probabilities.

    Sizes above N-1 are masked out.  The chosen size is a straight-through
    Gumbel one-hot during training and the plain argmax otherwise.
    """
    rows = nc.transpose(p)
    n = rows.shape[0]
    max_size = params["size.w2"].shape[1]
    features = _resize_candidates(rows, params["size.w1"].shape[0])
    hidden = nc.tanh(features @ params["size.w1"] + params["size.b1"])
    logits = hidden @ params["size.w2"] + params["size.b2"]
    allowed = np.broadcast_to(np.arange(1, max_size + 1) <= n - 1, (n, max_size))
    z = nc.softmax_temp(logits, 1.0, axis=-1, mask=allowed)
    onehot = nc.gumbel_softmax_st(logits, tau, rng, noise=training, mask=allowed)
    sizes = np.argmax(onehot.data > 0.5, axis=1) + 1
    return SizePrediction(z=z, onehot=onehot, sizes=sizes)


def sparsify(p: Tensor, sizes) -> tuple[Tensor, SparseGraph]:
    """Keep each scene's ``k_i`` most probable candidates.

    ``sizes`` is either an integer array of k_i (clamped to N-1 with a
    warning) or an N x C straight-through one-hot tensor, in which case the
    adjacency is sum_k onehot[:, k] * topk_k and gradients reach both the
    probabilities and the size selector.
    """
    rows = nc.transpose(p)
    n = rows.shape[0]
    eligible = candidate_mask(n)
    if isinstance(sizes, Tensor):
        onehot = sizes
        parts = []
        for k in range(1, min(onehot.shape[1], n - 1) + 1):
            parts.append(onehot[:, k - 1:k] * nc.straight_through_topk(rows, k, eligible))
        adjacency = parts[0]
        for part in parts[1:]:
            adjacency = adjacency + part
        k_values = np.argmax(onehot.data > 0.5, axis=1) + 1
    else:
        k_values = np.asarray(sizes, dtype=int).copy()
        if np.any(k_values < 1):
            raise ContractError(f"neighbourhood sizes must be >= 1, got {k_values.min()}")
        if np.any(k_values > n - 1):
            log.warning("clamping neighbourhood sizes above %d to N-1", n - 1)
            k_values = np.minimum(k_values, n - 1)
        adjacency = nc.straight_through_topk(rows, k_values, eligible)
    graph = SparseGraph(
        tuple(frozenset(np.flatnonzero(mask_row).tolist()) for mask_row in
              nc.topk_mask(rows.data, k_values, eligible) > 0.5),
        tuple(int(k) for k in k_values),
    )
    return adjacency, graph
