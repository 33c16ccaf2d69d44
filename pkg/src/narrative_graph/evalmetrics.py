"""Total Agreement, Partial Agreement and normalised Distance for TP identification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .datamodel import NUM_TPS, Screenplay
from .errors import ContractError


@dataclass(frozen=True)
class TPEvalCase:
    predicted: frozenset[int]
    gold: frozenset[int]
    n: int

    def __post_init__(self):
        if not self.gold:
            raise ContractError("gold scene set must be non-empty")
        if any(not 0 <= i < self.n for i in self.predicted | self.gold):
            raise ContractError(f"scene index out of range for N={self.n}")

    @classmethod
    def make(cls, predicted: Iterable[int], gold: Iterable[int], n: int) -> "TPEvalCase":
        return cls(frozenset(int(i) for i in predicted), frozenset(int(i) for i in gold), int(n))


def _check(cases: Sequence[TPEvalCase]) -> None:
    if not cases:
        raise ContractError("metrics need at least one case")


def jaccard(case: TPEvalCase) -> float:
    return len(case.predicted & case.gold) / len(case.predicted | case.gold)


def hit(case: TPEvalCase) -> float:
    return 1.0 if case.predicted & case.gold else 0.0


def distance(case: TPEvalCase) -> float:
    """Smallest |s - g| between the two sets, divided by N."""
    if not case.predicted:
        return 1.0
    s = np.fromiter(case.predicted, dtype=int)
    g = np.fromiter(case.gold, dtype=int)
    return float(np.abs(s[:, None] - g[None, :]).min()) / case.n


def total_agreement(cases: Sequence[TPEvalCase]) -> float:
    _check(cases)
    return float(np.mean([jaccard(c) for c in cases]))


def partial_agreement(cases: Sequence[TPEvalCase]) -> float:
    _check(cases)
    return float(np.mean([hit(c) for c in cases]))


def mean_distance(cases: Sequence[TPEvalCase]) -> float:
    _check(cases)
    return float(np.mean([distance(c) for c in cases]))


def movie_cases(windows: Sequence[Sequence[int]], movie: Screenplay) -> list[TPEvalCase]:
    if movie.gold_labels is None:
        raise ContractError(f"movie {movie.movie_id} has no gold labels")
    return [TPEvalCase.make(windows[t], movie.gold_labels[t + 1], movie.n_scenes) for t in range(NUM_TPS)]


def metric_report(windows_by_movie: dict[str, Sequence[Sequence[int]]], movies: Sequence[Screenplay]) -> dict:
    """Per-movie, per-TP and aggregate TA/PA/D (fractions, plus x100 copies)."""
    per_movie = {}
    all_cases: list[TPEvalCase] = []
    for movie in movies:
        cases = movie_cases(windows_by_movie[movie.movie_id], movie)
        all_cases.extend(cases)
        per_movie[movie.movie_id] = {
            "genre": movie.genre,
            "per_tp": {str(t + 1): {"TA": jaccard(c), "PA": hit(c), "D": distance(c)} for t, c in enumerate(cases)},
            "TA": total_agreement(cases),
            "PA": partial_agreement(cases),
            "D": mean_distance(cases),
        }
    aggregate = {
        "TA": total_agreement(all_cases),
        "PA": partial_agreement(all_cases),
        "D": mean_distance(all_cases),
    }
    return {
        "per_movie": per_movie,
        "aggregate": aggregate,
        "aggregate_percent": {k: 100.0 * v for k, v in aggregate.items()},
        "cases": len(all_cases),
    }
