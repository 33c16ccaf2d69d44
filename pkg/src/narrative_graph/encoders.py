"""Scene encoders: textual vectors v, contextualised vectors c, fused audiovisual vectors.

All functions take a flat parameter dict (``name -> Tensor``).  Sentence-,
segment- and frame-level inputs are padded into one batch per movie so the
recurrences run once per movie rather than once per scene.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc
from .datamodel import Scene
from .errors import ContractError, DimensionError, ValidationError
from .numcore import Tensor


@dataclass
class SceneEncoding:
    """Per-movie encoder outputs; every array has one row per scene."""

    v: Tensor
    c: Tensor
    av: Tensor | None
    sentence_attention: np.ndarray
    audio_attention: np.ndarray | None = None
    frame_attention: np.ndarray | None = None


def _lstm_params(prefix: str, d_in: int, hidden: int, rng: np.random.Generator) -> dict[str, Tensor]:
    return {
        f"{prefix}.w_in": nc.uniform_parameter((4 * hidden, d_in), d_in, rng, f"{prefix}.w_in"),
        f"{prefix}.w_rec": nc.uniform_parameter((4 * hidden, hidden), hidden, rng, f"{prefix}.w_rec"),
        f"{prefix}.bias": nc.zeros_parameter((4 * hidden,), f"{prefix}.bias"),
    }


def init_encoder_params(dims: dict[str, int], hidden: int, d_proj: int, d_fused: int,
                        rng: np.random.Generator) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    for direction in ("fwd", "bwd"):
        params.update(_lstm_params(f"sent.{direction}", dims["text"], hidden, rng))
    params["sent.attn"] = nc.uniform_parameter((2 * hidden, 1), 2 * hidden, rng, "sent.attn")
    for direction in ("fwd", "bwd"):
        params.update(_lstm_params(f"ctx.{direction}", 2 * hidden, hidden, rng))
    for modality, key in (("audio", "audio"), ("visual", "visual")):
        d_in = dims[key]
        params[f"{modality}.proj"] = nc.uniform_parameter((d_in, d_proj), d_in, rng, f"{modality}.proj")
        params[f"{modality}.proj_b"] = nc.zeros_parameter((d_proj,), f"{modality}.proj_b")
        params[f"{modality}.attn"] = nc.uniform_parameter((d_proj, 1), d_proj, rng, f"{modality}.attn")
    params["fuse.w"] = nc.uniform_parameter((2 * d_proj, d_fused), 2 * d_proj, rng, "fuse.w")
    params["fuse.b"] = nc.zeros_parameter((d_fused,), "fuse.b")
    return params


def _pad(groups: Sequence[np.ndarray], width: int) -> tuple[np.ndarray, np.ndarray]:
    steps = max(1, max(len(g) for g in groups))
    out = np.zeros((len(groups), steps, width))
    mask = np.zeros((len(groups), steps), dtype=bool)
    for row, g in enumerate(groups):
        out[row, :len(g)] = g
        mask[row, :len(g)] = True
    return out, mask


def bilstm(x: Tensor, mask: np.ndarray, params: dict[str, Tensor], prefix: str) -> Tensor:
    """Concatenated forward and backward LSTM states, batch x time x 2h."""
    fwd, bwd = ((params[f"{prefix}.{d}.w_in"], params[f"{prefix}.{d}.w_rec"], params[f"{prefix}.{d}.bias"])
                for d in ("fwd", "bwd"))
    return nc.bilstm_fused(x, mask, fwd, bwd)


def attention_pool(states: Tensor, mask: np.ndarray, scorer: Tensor) -> tuple[Tensor, Tensor]:
    """Softmax-weighted sum over the time axis of a batch x time x d tensor."""
    batch, steps, width = states.shape
    scores = (states.reshape(batch * steps, width) @ scorer).reshape(batch, steps)
    weights = nc.softmax_temp(scores, 1.0, axis=-1, mask=mask)
    pooled = (weights.reshape(batch, steps, 1) * states).sum(axis=1)
    return pooled, weights


def encode_scenes_text(scenes: Sequence[Scene], params: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Textual vectors v (N x 2h) and sentence attention weights (N x max sentences)."""
    if any(len(s.sentence_embeddings) == 0 for s in scenes):
        raise ContractError("every scene needs at least one sentence embedding")
    x, mask = _pad([s.sentence_embeddings for s in scenes], scenes[0].d_text)
    states = bilstm(Tensor(x), mask, params, "sent")
    return attention_pool(states, mask, params["sent.attn"])


def encode_scene_text(sentence_embeddings: np.ndarray, params: dict[str, Tensor]) -> tuple[Tensor, np.ndarray]:
    """Single-scene variant: returns v (2h,) and the attention weights."""
    sentences = np.atleast_2d(np.asarray(sentence_embeddings, dtype=np.float64))
    if sentences.shape[0] == 0 or np.asarray(sentence_embeddings).size == 0:
        raise ContractError("a scene needs at least one sentence embedding")
    states = bilstm(Tensor(sentences[None]), np.ones((1, len(sentences)), bool), params, "sent")
    pooled, weights = attention_pool(states, np.ones((1, len(sentences)), bool), params["sent.attn"])
    return pooled.reshape(-1), weights.data[0]


def contextualize(v: Tensor, params: dict[str, Tensor]) -> Tensor:
    """c_i = [forward h_i ; backward h_i] over the screenplay sequence, N x 2h."""
    if v.ndim != 2 or v.shape[0] < 1:
        raise DimensionError(f"contextualize expects N x d scene vectors, got {v.shape}")
    n = v.shape[0]
    states = bilstm(v.reshape(1, n, v.shape[1]), np.ones((1, n), bool), params, "ctx")
    return states.reshape(n, states.shape[2])


def _pool_modality(groups: Sequence[np.ndarray], params: dict[str, Tensor], name: str) -> tuple[Tensor, np.ndarray]:
    proj = params[f"{name}.proj"]
    width = proj.shape[0]
    for g in groups:
        if len(g) and g.shape[1] != width:
            raise ValidationError(f"{name} features have dim {g.shape[1]}, expected {width}")
    x, mask = _pad(groups, width)
    present = mask.any(axis=1)
    # rows without segments get one dummy slot so the softmax is defined, then are zeroed
    safe_mask = mask.copy()
    safe_mask[~present, 0] = True
    batch, steps, _ = x.shape
    hidden = nc.tanh(Tensor(x.reshape(batch * steps, width)) @ proj + params[f"{name}.proj_b"])
    pooled, weights = attention_pool(hidden.reshape(batch, steps, proj.shape[1]), safe_mask, params[f"{name}.attn"])
    keep = present.astype(np.float64)[:, None]
    return pooled * keep, weights.data * keep


def fuse_audiovisual(scenes: Sequence[Scene], params: dict[str, Tensor], modality: str = "audiovisual",
                     normalize: bool = True) -> tuple[Tensor, dict[str, np.ndarray]]:
    """Late fusion of attention-pooled audio and visual features, N x d_fused.

    Scenes lacking both modalities map to the zero vector.  With ``normalize``
    the fused vectors are layer-normalised and scaled by 1/sqrt(d_fused), so
    their dot products lie in [-1, 1].
    """
    use_audio = modality in ("audiovisual", "audio_only")
    use_visual = modality in ("audiovisual", "visual_only")
    n = len(scenes)
    d_proj = params["audio.proj"].shape[1]
    pooled, attention = [], {}
    present = np.zeros(n, dtype=bool)
    for name, on, groups in (("audio", use_audio, [s.audio_segments for s in scenes]),
                             ("visual", use_visual, [s.frames for s in scenes])):
        if on:
            vec, weights = _pool_modality(groups, params, name)
            present |= np.array([len(g) > 0 for g in groups])
            attention[name] = weights
        else:
            vec = Tensor(np.zeros((n, d_proj)))
        pooled.append(vec)
    fused = nc.tanh(nc.concat(pooled, axis=1) @ params["fuse.w"] + params["fuse.b"])
    fused = fused * present.astype(np.float64)[:, None]
    if normalize:
        fused = nc.layer_norm(fused) * (1.0 / np.sqrt(fused.shape[1]))
    return fused, attention


def av_similarity(av_i, av_j) -> Tensor:
    """u_ij: dot product of two fused vectors."""
    return nc.dot(nc.as_tensor(av_i), nc.as_tensor(av_j))


def av_similarity_matrix(av: Tensor) -> Tensor:
    """All pairwise u_ij as an N x N matrix."""
    return av @ nc.transpose(av)


def encode_screenplay(scenes: Sequence[Scene], params: dict[str, Tensor], modality: str = "text_only",
                      normalize: bool = True) -> SceneEncoding:
    """All encoder outputs for one movie (no dropout; the model applies it itself)."""
    v, sent_attn = encode_scenes_text(scenes, params)
    c = contextualize(v, params)
    av, attn = None, {}
    if modality != "text_only":
        av, attn = fuse_audiovisual(scenes, params, modality, normalize)
    return SceneEncoding(v, c, av, sent_attn.data, attn.get("audio"), attn.get("visual"))
