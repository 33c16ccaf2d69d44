"""One-layer graph convolution, per-TP posteriors and summary windows."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .datamodel import NUM_TPS
from .errors import DimensionError, ParameterError
from .graphbuild import SparseGraph
from .numcore import Tensor


def init_gcn_params(d_c: int, d_gcn: int, rng: np.random.Generator) -> dict[str, Tensor]:
    return {
        "gcn.w": nc.uniform_parameter((d_c, d_gcn), d_c, rng, "gcn.w"),
        "gcn.b": nc.zeros_parameter((d_gcn,), "gcn.b"),
        # one scalar head per TP over [c; t]
        "head.w": nc.uniform_parameter((d_c + d_gcn, NUM_TPS), d_c + d_gcn, rng, "head.w"),
        "head.b": nc.zeros_parameter((NUM_TPS,), "head.b"),
    }


def gcn_layer(graph: SparseGraph | Tensor, c: Tensor, params: dict[str, Tensor]) -> Tensor:
    """t_i = ReLU(mean over j in P_i + {i} of (W_g c_j + b))."""
    adjacency = nc.as_tensor(graph.adjacency()) if isinstance(graph, SparseGraph) else graph
    n = c.shape[0]
    if adjacency.shape != (n, n):
        raise DimensionError(f"graph over {adjacency.shape[0]} scenes but {n} content vectors")
    with_self = adjacency + np.eye(n)
    messages = c @ params["gcn.w"] + params["gcn.b"]
    return nc.relu((with_self @ messages) / with_self.sum(axis=1, keepdims=True))


def tp_posteriors(c: Tensor, t: Tensor, params: dict[str, Tensor]) -> Tensor:
    """5 x N matrix; row t is a softmax over scenes of head_t([c_i; t_i])."""
    if c.shape[0] != t.shape[0]:
        raise DimensionError(f"content {c.shape} and neighbourhood {t.shape} disagree on N")
    scores = nc.concat([c, t], axis=1) @ params["head.w"] + params["head.b"]
    return nc.softmax_temp(nc.transpose(scores), 1.0, axis=-1)


def tp_window(center: int, n: int, length: int) -> list[int]:
    """``length`` consecutive scenes around ``center``, shifted to stay inside [0, n)."""
    if length < 1:
        raise ParameterError(f"window length must be >= 1, got {length}")
    if n <= length:
        return list(range(n))
    start = center - length // 2
    start = min(max(start, 0), n - length)
    return list(range(start, start + length))


@dataclass
class TPPrediction:
    posteriors: np.ndarray
    tp_scene_windows: list[list[int]]
    summary: list[int] = field(default_factory=list)
    movie_id: str = ""
    source: str = "graphtp"

    def to_json(self) -> dict:
        return {
            "movie_id": self.movie_id,
            "source": self.source,
            "posteriors": self.posteriors.tolist(),
            "windows": {str(t + 1): w for t, w in enumerate(self.tp_scene_windows)},
            "summary": self.summary,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TPPrediction":
        return cls(
            posteriors=np.asarray(doc["posteriors"], dtype=np.float64),
            tp_scene_windows=[list(doc["windows"][str(t)]) for t in range(1, NUM_TPS + 1)],
            summary=list(doc["summary"]),
            movie_id=doc.get("movie_id", ""),
            source=doc.get("source", "graphtp"),
        )


def windows_to_summary(windows: Sequence[Sequence[int]]) -> list[int]:
    return sorted({i for w in windows for i in w})


def select_summary(posteriors: np.ndarray, length: int = 3, movie_id: str = "") -> TPPrediction:
    """Peak scene per TP (lowest index on ties), widened to a window of ``length``."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    n = posteriors.shape[1]
    windows = [tp_window(int(np.argmax(row)), n, length) for row in posteriors]
    return TPPrediction(posteriors, windows, windows_to_summary(windows), movie_id)


def export_predictions(predictions: Sequence[TPPrediction], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([p.to_json() for p in predictions], indent=1))
    return path
