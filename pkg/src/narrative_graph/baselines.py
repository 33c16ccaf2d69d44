"""Positional and unsupervised graph baselines for TP identification.

Every baseline returns five scene windows (one per TP, in TP order) so the
output can be scored with :mod:`evalmetrics` exactly like model predictions.
"""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from .config import TrainConfig
from .datamodel import DEFAULT_ANCHORS, NUM_TPS, Screenplay, corpus_dims, round_half_up
from .encoders import av_similarity_matrix, fuse_audiovisual
from .errors import ContractError, DataError, DimensionError
from .gcn_tp import TPPrediction, tp_window, windows_to_summary

log = logging.getLogger(__name__)

WINDOW = 3
BASELINES = ("random_even", "theory_position", "distribution_position", "textrank", "textrank_av", "scenesum")


# ---------------------------------------------------------------------------
# positional baselines
# ---------------------------------------------------------------------------

def even_sections(n: int) -> list[tuple[int, int]]:
    """Five half-open sections of length n // 5, the remainder going to the last."""
    if n < NUM_TPS:
        raise ContractError(f"cannot split {n} scenes into {NUM_TPS} non-empty sections")
    size = n // NUM_TPS
    bounds = [(t * size, (t + 1) * size) for t in range(NUM_TPS - 1)]
    bounds.append(((NUM_TPS - 1) * size, n))
    return bounds


def random_even_baseline(n: int, seed: int) -> list[list[int]]:
    """A uniformly placed 3-scene window inside each of five even sections."""
    rng = np.random.default_rng(seed)
    sections = even_sections(n)
    if n < NUM_TPS * WINDOW:
        log.warning("random_even: %d scenes is too few for %d-scene windows; windows shrink to fit", n, WINDOW)
    windows = []
    for lo, hi in sections:
        width = min(WINDOW, hi - lo)
        start = int(rng.integers(lo, hi - width + 1))
        windows.append(list(range(start, start + width)))
    return windows


def position_windows(n: int, anchors: Sequence[float], length: int = WINDOW) -> list[list[int]]:
    """Windows centred at round(a_t * n) (halves round up), clamped into range."""
    if len(anchors) != NUM_TPS:
        raise DimensionError(f"expected {NUM_TPS} anchors, got {len(anchors)}")
    centers = [min(max(round_half_up(a * n), 0), n - 1) for a in anchors]
    return [tp_window(c, n, length) for c in centers]


def theory_position_baseline(n: int) -> list[list[int]]:
    if n < WINDOW:
        raise ContractError(f"theory_position needs at least {WINDOW} scenes, got {n}")
    return position_windows(n, DEFAULT_ANCHORS)


def _movie_centers(movie: Screenplay) -> list[int] | None:
    if movie.gold_labels is not None:
        return movie.gold_centers()
    if movie.teacher_posteriors is not None:
        return [int(i) for i in np.argmax(movie.teacher_posteriors, axis=1)]
    return None


def learn_anchors(train_corpus: Sequence[Screenplay]) -> tuple[float, ...]:
    """Mean normalised TP position over the labelled training movies."""
    fractions = []
    for movie in train_corpus:
        centers = _movie_centers(movie)
        if centers is not None:
            fractions.append(np.asarray(centers, dtype=np.float64) / movie.n_scenes)
    if not fractions:
        raise DataError("distribution_position needs training movies with gold labels or teacher posteriors")
    return tuple(float(a) for a in np.mean(fractions, axis=0))


def distribution_position_baseline(train_corpus: Sequence[Screenplay], n: int | None = None):
    """Learned anchors, or windows for an ``n``-scene movie when ``n`` is given."""
    anchors = learn_anchors(train_corpus)
    if n is None:
        return anchors
    return position_windows(n, anchors)


# ---------------------------------------------------------------------------
# graph baselines
# ---------------------------------------------------------------------------

def centrality(e: np.ndarray, lambda1: float = 0.5, lambda2: float = 0.5) -> np.ndarray:
    """lambda1 * sum_{j<i} e_ij + lambda2 * sum_{j>i} e_ij for every scene i."""
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] != e.shape[1]:
        raise DimensionError(f"similarity matrix must be square, got {e.shape}")
    before = np.tril(e, k=-1).sum(axis=1)
    after = np.triu(e, k=1).sum(axis=1)
    return lambda1 * before + lambda2 * after


def top_scene_windows(scores: np.ndarray, length: int = WINDOW) -> list[list[int]]:
    """Five highest-scoring scenes (lower index wins ties), in screenplay order, widened to windows."""
    n = len(scores)
    chosen = sorted(np.argsort(-np.asarray(scores), kind="stable")[:NUM_TPS].tolist())
    return [tp_window(i, n, length) for i in chosen]


def textrank_baseline(e: np.ndarray, lambda1: float = 0.5, lambda2: float = 0.5) -> list[list[int]]:
    e = np.asarray(e, dtype=np.float64)
    if e.shape[0] < NUM_TPS:
        raise ContractError(f"textrank needs at least {NUM_TPS} scenes, got {e.shape[0]}")
    return top_scene_windows(centrality(e, lambda1, lambda2))


def character_scores(characters: Sequence[Sequence[str]], main_characters: Sequence[str]) -> np.ndarray:
    """Share of each scene's characters that are main characters; 0 for scenes without any."""
    main = set(main_characters)
    scores = np.zeros(len(characters))
    for i, names in enumerate(characters):
        present = set(names)
        if present:
            scores[i] = len(present & main) / len(present)
    return scores


def scenesum_baseline(e: np.ndarray, characters: Sequence[Sequence[str]], main_characters: Sequence[str],
                      lambda1: float = 0.5, lambda2: float = 0.5) -> list[list[int]]:
    e = np.asarray(e, dtype=np.float64)
    if len(characters) != e.shape[0]:
        raise DimensionError(f"{len(characters)} character lists for {e.shape[0]} scenes")
    c = character_scores(characters, main_characters)
    return textrank_baseline(e + c[:, None] + c[None, :], lambda1, lambda2)


def baseline_similarity(movie: Screenplay, model=None, multimodal: bool = False, seed: int = 0) -> np.ndarray:
    """Scene similarity E from ``model`` (or a freshly initialised one), times u when multimodal."""
    from .model import GraphTP  # local import: model pulls in the full training graph

    if model is None:
        dims = corpus_dims([movie])
        model = GraphTP(TrainConfig(seed=seed), dims)
    if model.config.modality != "text_only":
        model = GraphTP(model.config.replace(modality="text_only"), model.dims, params=model.params)
    e = model.similarity_matrix(movie)
    if multimodal:
        av, _ = fuse_audiovisual(movie.scenes, model.params, "audiovisual", model.config.normalize_av)
        e = e * av_similarity_matrix(av).data
    return e


# ---------------------------------------------------------------------------
# running baselines over a corpus
# ---------------------------------------------------------------------------

def windows_prediction(windows: list[list[int]], n: int, movie_id: str, source: str) -> TPPrediction:
    """Wrap windows as a prediction; posteriors are uniform over each window."""
    posteriors = np.zeros((NUM_TPS, n))
    for t, w in enumerate(windows):
        posteriors[t, w] = 1.0 / len(w)
    return TPPrediction(posteriors, windows, windows_to_summary(windows), movie_id, source)


def run_baseline(name: str, movies: Sequence[Screenplay], seed: int = 0,
                 train_corpus: Sequence[Screenplay] | None = None, model=None) -> list[TPPrediction]:
    """Predictions of baseline ``name`` for every movie, deterministic given ``seed``."""
    if name not in BASELINES:
        raise ContractError(f"unknown baseline {name!r}; choose from {', '.join(BASELINES)}")
    anchors = learn_anchors(train_corpus if train_corpus is not None else movies) \
        if name == "distribution_position" else None
    out = []
    for index, movie in enumerate(movies):
        n = movie.n_scenes
        if name == "random_even":
            windows = random_even_baseline(n, seed + index)
        elif name == "theory_position":
            windows = theory_position_baseline(n)
        elif name == "distribution_position":
            windows = position_windows(n, anchors)
        else:
            e = baseline_similarity(movie, model, multimodal=(name == "textrank_av"), seed=seed)
            if name == "scenesum":
                windows = scenesum_baseline(e, [s.characters for s in movie.scenes], movie.main_characters)
            else:
                windows = textrank_baseline(e)
        out.append(windows_prediction(windows, n, movie.movie_id, name))
    return out
