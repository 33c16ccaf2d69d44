"""GraphTP: encoders, learned sparse scene graph, GCN and TP heads in one forward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .config import TrainConfig
from .datamodel import Screenplay
from .encoders import (
    av_similarity_matrix,
    contextualize,
    encode_scenes_text,
    fuse_audiovisual,
    init_encoder_params,
)
from .gcn_tp import TPPrediction, gcn_layer, init_gcn_params, select_summary, tp_posteriors
from .graphbuild import (
    SizePrediction,
    SparseGraph,
    init_similarity_params,
    init_size_params,
    neighbor_distributions,
    pairwise_similarity,
    predict_neighborhood_size,
    sparsify,
)
from .numcore import Tensor


@dataclass
class ForwardResult:
    posteriors: Tensor          # 5 x N
    similarity: Tensor          # E, N x N
    neighbor_probs: Tensor      # P, column j = distribution of anchor j
    sizes: SizePrediction
    adjacency: Tensor
    graph: SparseGraph
    content: Tensor             # c, N x 2h
    neighborhood: Tensor        # t, N x d_gcn
    sentence_attention: Tensor
    av: Tensor | None
    av_attention: dict


class GraphTP:
    """Parameter container plus the forward computation for one screenplay."""

    def __init__(self, config: TrainConfig, dims: dict[str, int], params: dict[str, Tensor] | None = None):
        self.config = config
        self.dims = dict(dims)
        if params is None:
            rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
            params = {}
            params.update(init_encoder_params(dims, config.hidden, config.d_proj, config.d_fused, rng))
            params.update(init_similarity_params(2 * config.hidden, config.d_sim, rng))
            params.update(init_size_params(config.size_input, config.size_hidden, config.max_neighbors, rng))
            params.update(init_gcn_params(2 * config.hidden, config.d_gcn, rng))
        self.params = params

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(self, movie: Screenplay, training: bool = False, rng: np.random.Generator | None = None,
                av_override: Tensor | None = None) -> ForwardResult:
        cfg, params = self.config, self.params
        scenes = movie.scenes
        v, sent_attn = encode_scenes_text(scenes, params)
        v = nc.dropout(v, cfg.dropout, rng, training)
        c = nc.dropout(contextualize(v, params), cfg.dropout, rng, training)

        av, av_attn, u = None, {}, None
        if cfg.modality != "text_only":
            av, av_attn = fuse_audiovisual(scenes, params, cfg.modality, cfg.normalize_av)
            u = av_similarity_matrix(av)
        if av_override is not None:
            u = av_override

        e = pairwise_similarity(v, u, params)
        p = neighbor_distributions(e, cfg.tau)
        sizes = predict_neighborhood_size(p, params, cfg.tau, training, rng)
        adjacency, graph = sparsify(p, sizes.onehot)
        t = gcn_layer(adjacency, c, params)
        posteriors = tp_posteriors(c, t, params)
        return ForwardResult(posteriors, e, p, sizes, adjacency, graph, c, t, sent_attn, av, av_attn)

    def predict(self, movie: Screenplay) -> TPPrediction:
        out = self.forward(movie, training=False)
        pred = select_summary(out.posteriors.data, self.config.window, movie.movie_id)
        return pred

    def similarity_matrix(self, movie: Screenplay) -> np.ndarray:
        return self.forward(movie, training=False).similarity.data.copy()

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_params(self, values: dict[str, np.ndarray]) -> None:
        for k, arr in values.items():
            self.params[k].data = np.array(arr, dtype=np.float64)
