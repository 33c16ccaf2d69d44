"""Screenplay data types, corpus I/O, synthetic corpora and fold splitting.

A corpus directory holds one JSON document per movie plus ``manifest.json``::

    {"movies": ["m000.json", ...], "dims": {"text": 32, "audio": 16, "visual": 16}}

Each movie document carries ``movie_id``, ``genre``, ``main_characters``,
``scenes`` (``index``, ``sentences``, ``audio``, ``frames``, ``characters``)
and optionally ``teacher`` (5 x N) and ``gold`` ("1".."5" -> scene indices).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import GenerationError, ParameterError, ValidationError

NUM_TPS = 5
TP_NAMES = ("Opportunity", "Change of Plans", "Point of No Return", "Major Setback", "Climax")
GENRES = ("comedy_romance", "thriller_mystery", "action", "drama_other")
DEFAULT_ANCHORS = (0.10, 0.25, 0.50, 0.75, 0.90)
MANIFEST = "manifest.json"


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _frozen_matrix(rows, width: int, what: str) -> np.ndarray:
    try:
        arr = np.asarray(rows, dtype=np.float64)
    except (TypeError, ValueError):
        raise ValidationError(f"{what}: rows must be equal-length numeric arrays") from None
    if arr.size == 0:
        arr = np.zeros((0, width))
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ValidationError(f"{what}: expected rows of length {width}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what}: non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Scene:
    index: int
    sentence_embeddings: np.ndarray
    audio_segments: np.ndarray
    frames: np.ndarray
    characters: tuple[str, ...] = ()

    def __post_init__(self):
        if self.sentence_embeddings.ndim != 2 or len(self.sentence_embeddings) == 0:
            raise ValidationError(f"scene {self.index}: needs at least one sentence embedding")

    @property
    def d_text(self) -> int:
        return self.sentence_embeddings.shape[1]


@dataclass(frozen=True)
class Screenplay:
    movie_id: str
    genre: str
    scenes: tuple[Scene, ...]
    gold_labels: Mapping[int, frozenset[int]] | None = None
    teacher_posteriors: np.ndarray | None = None
    main_characters: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.scenes)
        if n == 0:
            raise ValidationError(f"movie {self.movie_id}: no scenes")
        if self.genre not in GENRES:
            raise ValidationError(f"movie {self.movie_id}: unknown genre {self.genre!r}")
        for pos, scene in enumerate(self.scenes):
            if scene.index != pos:
                raise ValidationError(f"movie {self.movie_id}: scene indices must be 0..N-1, got {scene.index} at {pos}")
        if len({s.d_text for s in self.scenes}) != 1:
            raise ValidationError(f"movie {self.movie_id}: sentence dims differ across scenes")
        if self.gold_labels is not None:
            if set(self.gold_labels) != set(range(1, NUM_TPS + 1)):
                raise ValidationError(f"movie {self.movie_id}: gold labels need TPs 1..5")
            for tp, idx in self.gold_labels.items():
                if not idx or any(not 0 <= i < n for i in idx):
                    raise ValidationError(f"movie {self.movie_id}: gold TP{tp} indices {sorted(idx)} out of range")
        if self.teacher_posteriors is not None:
            validate_teacher(self.teacher_posteriors, n, self.movie_id)

    @property
    def n_scenes(self) -> int:
        return len(self.scenes)

    def gold_centers(self) -> list[float]:
        """Mean gold scene index per TP.

        For an interior synthetic TP this is the planted scene; a gold set cut
        off by the screenplay boundary has a half-integer centre.
        """
        if self.gold_labels is None:
            raise ValidationError(f"movie {self.movie_id}: no gold labels")
        return [float(np.mean(sorted(self.gold_labels[t]))) for t in range(1, NUM_TPS + 1)]


def validate_teacher(matrix: np.ndarray, n: int, movie_id: str) -> None:
    if matrix.shape != (NUM_TPS, n):
        raise ValidationError(f"movie {movie_id}: teacher posteriors must be {NUM_TPS}x{n}, got {matrix.shape}")
    if np.any(matrix < 0) or not np.all(np.isfinite(matrix)):
        raise ValidationError(f"movie {movie_id}: teacher posteriors must be finite and non-negative")
    for t, row in enumerate(matrix, start=1):
        if abs(row.sum() - 1.0) > 1e-6:
            raise ValidationError(f"movie {movie_id}: teacher row TP{t} sums to {row.sum():.6f}, expected 1")


def corpus_dims(corpus: Sequence[Screenplay]) -> dict[str, int]:
    first = corpus[0].scenes[0]
    return {"text": first.d_text, "audio": first.audio_segments.shape[1], "visual": first.frames.shape[1]}


# ---------------------------------------------------------------------------
# JSON I/O
# ---------------------------------------------------------------------------

def screenplay_to_json(movie: Screenplay) -> dict:
    doc = {
        "movie_id": movie.movie_id,
        "genre": movie.genre,
        "main_characters": list(movie.main_characters),
        "scenes": [
            {
                "index": s.index,
                "sentences": s.sentence_embeddings.tolist(),
                "audio": s.audio_segments.tolist(),
                "frames": s.frames.tolist(),
                "characters": list(s.characters),
            }
            for s in movie.scenes
        ],
    }
    if movie.teacher_posteriors is not None:
        doc["teacher"] = movie.teacher_posteriors.tolist()
    if movie.gold_labels is not None:
        doc["gold"] = {str(t): sorted(idx) for t, idx in sorted(movie.gold_labels.items())}
    return doc


def screenplay_from_json(doc: dict, dims: Mapping[str, int], source: str = "<memory>") -> Screenplay:
    try:
        movie_id = str(doc["movie_id"])
        scenes = tuple(
            Scene(
                index=int(s["index"]),
                sentence_embeddings=_frozen_matrix(s["sentences"], dims["text"], f"{source}: scene {s['index']} sentences"),
                audio_segments=_frozen_matrix(s.get("audio", []), dims["audio"], f"{source}: scene {s['index']} audio"),
                frames=_frozen_matrix(s.get("frames", []), dims["visual"], f"{source}: scene {s['index']} frames"),
                characters=tuple(s.get("characters", [])),
            )
            for s in doc["scenes"]
        )
        teacher = None
        if doc.get("teacher") is not None:
            teacher = np.asarray(doc["teacher"], dtype=np.float64)
            teacher.setflags(write=False)
        gold = None
        if doc.get("gold") is not None:
            gold = {int(t): frozenset(int(i) for i in idx) for t, idx in doc["gold"].items()}
        return Screenplay(
            movie_id=movie_id,
            genre=doc["genre"],
            scenes=scenes,
            gold_labels=gold,
            teacher_posteriors=teacher,
            main_characters=tuple(doc.get("main_characters", [])),
        )
    except KeyError as exc:
        raise ValidationError(f"{source}: missing field {exc}") from None


def save_corpus(corpus: Sequence[Screenplay], path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    files = []
    for movie in corpus:
        name = f"{movie.movie_id}.json"
        (root / name).write_text(json.dumps(screenplay_to_json(movie)))
        files.append(name)
    manifest = {"movies": files, "dims": corpus_dims(corpus) if corpus else {}}
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return root


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}: malformed JSON ({exc.msg})") from None


def load_corpus(path) -> list[Screenplay]:
    """Load and validate every movie listed in ``path/manifest.json``."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory {root} does not exist")
    manifest = _read_json(root / MANIFEST)
    dims = manifest.get("dims")
    if not dims or set(dims) != {"text", "audio", "visual"}:
        raise ValidationError(f"{root / MANIFEST}: dims must list text, audio and visual")
    return [screenplay_from_json(_read_json(root / name), dims, str(root / name)) for name in manifest["movies"]]


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs of the synthetic corpus.

    ``position_jitter`` is the std of the planted TP offset as a fraction of N;
    ``teacher_width`` is the std (in scenes) of each teacher bump, smaller
    meaning a sharper teacher.
    """

    movie_count: int = 100
    scene_range: tuple[int, int] = (60, 140)
    d_text: int = 32
    d_audio: int = 16
    d_visual: int = 16
    sentence_range: tuple[int, int] = (2, 5)
    audio_range: tuple[int, int] = (1, 4)
    frame_range: tuple[int, int] = (1, 4)
    anchors: tuple[float, ...] = DEFAULT_ANCHORS
    position_jitter: float = 0.02
    embedding_noise: float = 0.5
    teacher_width: float = 2.0
    substories: int = 4
    characters_per_movie: int = 12
    main_character_count: int = 3
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.scene_range
        if self.movie_count < 1 or lo < 1 or hi < lo:
            raise ParameterError(f"invalid movie_count/scene_range: {self.movie_count}, {self.scene_range}")
        if len(self.anchors) != NUM_TPS or not all(0 < a < 1 for a in self.anchors) \
                or any(b <= a for a, b in zip(self.anchors, self.anchors[1:])):
            raise ParameterError(f"anchors must be five strictly increasing fractions in (0,1): {self.anchors}")
        if self.position_jitter < 0 or self.embedding_noise <= 0 or self.teacher_width <= 0:
            raise ParameterError("jitter must be >= 0; embedding noise and teacher width must be > 0")
        for name in ("sentence_range", "audio_range", "frame_range"):
            a, b = getattr(self, name)
            if a < 0 or b < a or (name == "sentence_range" and a < 1):
                raise ParameterError(f"invalid {name}: {(a, b)}")
        if not 1 <= self.main_character_count <= self.characters_per_movie or self.substories < 1:
            raise ParameterError("invalid character or substory counts")

    @classmethod
    def from_dict(cls, values: Mapping) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(values) - known
        if unknown:
            raise ParameterError(f"unknown synthetic spec keys: {sorted(unknown)}")
        cleaned = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
        return cls(**cleaned)


def plant_positions(n: int, anchors: Sequence[float], jitter: float, rng: np.random.Generator,
                    max_tries: int = 1000) -> list[int]:
    base = np.array([round_half_up(a * n) for a in anchors], dtype=float)
    for _ in range(max_tries):
        offsets = rng.normal(0.0, jitter * n, size=len(anchors)) if jitter > 0 else np.zeros(len(anchors))
        pos = np.clip(np.rint(base + offsets), 0, n - 1).astype(int)
        if np.all(np.diff(pos) > 0):
            return pos.tolist()
    raise GenerationError(f"could not plant strictly increasing TPs in {n} scenes after {max_tries} tries")


def _gaussian_bump(n: int, center: int, width: float) -> np.ndarray:
    row = np.exp(-0.5 * ((np.arange(n) - center) / width) ** 2)
    return row / row.sum()


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> list[Screenplay]:
    spec.validate()
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.movie_count + 1)
    shared = np.random.default_rng(seeds[0])
    tp_centers = shared.normal(size=(NUM_TPS, spec.d_text))
    corpus = []
    for m, seq in enumerate(seeds[1:]):
        rng = np.random.default_rng(seq)
        n = int(rng.integers(spec.scene_range[0], spec.scene_range[1] + 1))
        planted = plant_positions(n, spec.anchors, spec.position_jitter, rng)
        text_centers = rng.normal(size=(spec.substories, spec.d_text))
        audio_centers = rng.normal(size=(spec.substories, spec.d_audio))
        visual_centers = rng.normal(size=(spec.substories, spec.d_visual))
        names = [f"char{j:02d}" for j in range(spec.characters_per_movie)]
        main = names[:spec.main_character_count]

        story = np.empty(n, dtype=int)
        story[0] = rng.integers(spec.substories)
        for i in range(1, n):
            story[i] = story[i - 1] if rng.random() < 0.7 else rng.integers(spec.substories)

        tp_of_scene = {pos: t for t, pos in enumerate(planted)}
        noise = spec.embedding_noise
        scenes = []
        for i in range(n):
            k = int(rng.integers(spec.sentence_range[0], spec.sentence_range[1] + 1))
            center = tp_centers[tp_of_scene[i]] if i in tp_of_scene else text_centers[story[i]]
            sentences = center + noise * rng.normal(size=(k, spec.d_text))
            a = int(rng.integers(spec.audio_range[0], spec.audio_range[1] + 1))
            f = int(rng.integers(spec.frame_range[0], spec.frame_range[1] + 1))
            audio = audio_centers[story[i]] + noise * rng.normal(size=(a, spec.d_audio))
            frames = visual_centers[story[i]] + noise * rng.normal(size=(f, spec.d_visual))
            cast = list(rng.choice(names, size=int(rng.integers(1, 5)), replace=False))
            if i in tp_of_scene and not set(cast) & set(main):
                cast[0] = str(rng.choice(main))
            scenes.append(Scene(
                index=i,
                sentence_embeddings=_frozen_matrix(sentences, spec.d_text, "sentences"),
                audio_segments=_frozen_matrix(audio, spec.d_audio, "audio"),
                frames=_frozen_matrix(frames, spec.d_visual, "frames"),
                characters=tuple(str(c) for c in cast),
            ))

        teacher = np.stack([_gaussian_bump(n, p, spec.teacher_width) for p in planted])
        teacher.setflags(write=False)
        gold = {t + 1: frozenset(j for j in (p - 1, p, p + 1) if 0 <= j < n) for t, p in enumerate(planted)}
        corpus.append(Screenplay(
            movie_id=f"movie{m:03d}",
            genre=GENRES[int(rng.integers(len(GENRES)))],
            scenes=tuple(scenes),
            gold_labels=gold,
            teacher_posteriors=teacher,
            main_characters=tuple(main),
        ))
    return corpus


def split_folds(corpus: Sequence[Screenplay], k: int, seed: int = 0) -> list[tuple[list[Screenplay], list[Screenplay]]]:
    """Partition ``corpus`` into ``k`` (train, test) pairs with disjoint test folds."""
    if not 1 <= k <= len(corpus):
        raise ParameterError(f"fold count {k} must lie in [1, {len(corpus)}]")
    order = np.random.default_rng(seed).permutation(len(corpus))
    folds = np.array_split(order, k)
    out = []
    for test_idx in folds:
        test_set = set(test_idx.tolist())
        out.append(([corpus[i] for i in range(len(corpus)) if i not in test_set],
                    [corpus[i] for i in sorted(test_set)]))
    return out
