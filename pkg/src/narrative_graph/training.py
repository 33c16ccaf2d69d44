"""Distillation objective with focal regulariser, training loop and cross-validation."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .config import TrainConfig
from .datamodel import Screenplay, corpus_dims, split_folds
from .errors import ContractError, DataError, DimensionError, ParameterError, ValidationError
from .evalmetrics import metric_report
from .model import ForwardResult, GraphTP
from .numcore import Tensor

log = logging.getLogger(__name__)

CHECKPOINT_MANIFEST = "checkpoint.json"
CHECKPOINT_BLOB = "params.bin"


# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------

def distillation_loss(p_row, q_row) -> Tensor:
    """O_t = KL(p_t || q_t), student first."""
    p_row, q_row = nc.as_tensor(p_row), nc.as_tensor(q_row)
    if p_row.shape != q_row.shape:
        raise DimensionError(f"student row {p_row.shape} and teacher row {q_row.shape} differ")
    return nc.kl_divergence(p_row, q_row)


def gaussian_prior(i: int, n: int, sigma_prior: float) -> np.ndarray:
    """Gaussian over scenes centred at i with std sigma_prior * n; self entry is 0."""
    if not 0 <= i < n:
        raise ParameterError(f"scene index {i} outside [0, {n})")
    return gaussian_prior_matrix(n, sigma_prior)[i]


def gaussian_prior_matrix(n: int, sigma_prior: float) -> np.ndarray:
    if n < 2:
        raise ParameterError("the prior needs at least two scenes")
    idx = np.arange(n)
    d = idx[None, :] - idx[:, None]
    width = sigma_prior * n
    g = np.exp(-(d * d) / (2.0 * width * width))
    np.fill_diagonal(g, 0.0)
    return g / g.sum(axis=1, keepdims=True)


def focal_term(e_col, i: int, g_i: np.ndarray) -> Tensor:
    """F_i = KL(softmax of e over candidates != i at temperature 1 || g_i)."""
    e_col = nc.as_tensor(e_col)
    mask = np.ones(e_col.shape[0], dtype=bool)
    mask[i] = False
    return nc.kl_divergence(nc.softmax_temp(e_col, 1.0, mask=mask), g_i)


def focal_terms(e: Tensor, prior: np.ndarray) -> Tensor:
    """All F_i at once; column i of ``e`` holds scene i's candidate scores."""
    n = e.shape[0]
    p_tilde = nc.softmax_temp(e, 1.0, axis=0, mask=~np.eye(n, dtype=bool))
    return nc.kl_divergence(nc.transpose(p_tilde), prior, axis=-1)


@dataclass(frozen=True)
class LossBreakdown:
    distillation: tuple[float, ...]
    focal_mean: float
    total: float

    def to_dict(self) -> dict:
        return {"distillation": list(self.distillation), "focal_mean": self.focal_mean, "total": self.total}


def total_loss(distillation: Sequence[Tensor] | Tensor, focal: Tensor, lam: float) -> tuple[Tensor, LossBreakdown]:
    """L = mean_t O_t + lam * mean_i F_i."""
    o = distillation if isinstance(distillation, Tensor) else nc.stack(list(distillation))
    f_mean = nc.as_tensor(focal).mean()
    total = o.mean() + f_mean * lam
    return total, LossBreakdown(tuple(float(x) for x in o.data), float(f_mean.data), float(total.data))


def movie_loss(model: GraphTP, movie: Screenplay, training: bool = True,
               rng: np.random.Generator | None = None) -> tuple[Tensor, LossBreakdown, ForwardResult]:
    if movie.teacher_posteriors is None:
        raise DataError(f"movie {movie.movie_id} has no teacher posteriors")
    cfg = model.config
    out = model.forward(movie, training=training, rng=rng)
    prior = gaussian_prior_matrix(movie.n_scenes, cfg.sigma_prior)
    o = nc.kl_divergence(out.posteriors, movie.teacher_posteriors, axis=-1)
    f = focal_terms(out.similarity, prior)
    loss, breakdown = total_loss(o, f, cfg.lam)
    return loss, breakdown, out


def _assert_rows(name: str, matrix: np.ndarray, axis: int = -1, tol: float = 1e-6) -> None:
    sums = np.asarray(matrix).sum(axis=axis)
    if np.any(np.asarray(matrix) < 0) or np.any(np.abs(sums - 1.0) > tol):
        raise ContractError(f"{name} is not a probability distribution (worst sum {sums.flat[np.argmax(np.abs(sums - 1))]})")


def check_distribution_contracts(out: ForwardResult, prior: np.ndarray | None = None) -> int:
    """Assert every distribution of a forward pass sums to one; returns the number checked."""
    checks = [
        ("sentence attention", out.sentence_attention.data, -1),
        ("neighbour distribution", out.neighbor_probs.data, 0),
        ("size distribution z", out.sizes.z.data, -1),
        ("TP posterior", out.posteriors.data, -1),
    ]
    for name, weights in out.av_attention.items():
        present = weights.sum(axis=-1) > 0
        checks.append((f"{name} attention", weights[present], -1))
    if prior is not None:
        checks.append(("gaussian prior", prior, -1))
    count = 0
    for name, matrix, axis in checks:
        _assert_rows(name, matrix, axis)
        count += matrix.shape[0] if axis == -1 else matrix.shape[1]
    return count


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: GraphTP
    history: list[LossBreakdown] = field(default_factory=list)
    best_epoch: int = -1
    contract_checks: int = 0


def _mean_breakdown(items: Sequence[LossBreakdown]) -> LossBreakdown:
    return LossBreakdown(
        tuple(float(x) for x in np.mean([b.distillation for b in items], axis=0)),
        float(np.mean([b.focal_mean for b in items])),
        float(np.mean([b.total for b in items])),
    )


def train(corpus: Sequence[Screenplay], config: TrainConfig, check_contracts: bool = False,
          model: GraphTP | None = None) -> TrainResult:
    """One Adam step per movie, movies shuffled per epoch; deterministic given ``config.seed``."""
    if not corpus:
        raise DataError("training corpus is empty")
    for movie in corpus:
        if movie.teacher_posteriors is None:
            raise DataError(f"movie {movie.movie_id} has no teacher posteriors")
    model = model or GraphTP(config, corpus_dims(corpus))
    _, shuffle_seq, noise_seq = np.random.SeedSequence(config.seed).spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    noise_rng = np.random.default_rng(noise_seq)
    opt = nc.Adam(model.params, lr=config.learning_rate, beta1=config.adam_beta1,
                  beta2=config.adam_beta2, eps=config.adam_eps)
    result = TrainResult(model)
    best_loss, best_params = np.inf, None
    for epoch in range(config.epochs):
        items = []
        for idx in shuffle_rng.permutation(len(corpus)):
            movie = corpus[idx]
            opt.zero_grad()
            loss, breakdown, out = movie_loss(model, movie, True, noise_rng)
            if check_contracts:
                prior = gaussian_prior_matrix(movie.n_scenes, config.sigma_prior)
                result.contract_checks += check_distribution_contracts(out, prior)
            loss.backward()
            opt.step()
            items.append(breakdown)
        summary = _mean_breakdown(items)
        result.history.append(summary)
        log.info("epoch %d loss %.5f focal %.5f", epoch, summary.total, summary.focal_mean)
        if config.keep_best and summary.total < best_loss:
            best_loss, best_params, result.best_epoch = summary.total, model.copy_params(), epoch
    if config.keep_best and best_params is not None:
        model.load_params(best_params)
    return result


def predict_corpus(model: GraphTP, movies: Sequence[Screenplay]):
    return [model.predict(m) for m in movies]


def evaluate_model(model: GraphTP, movies: Sequence[Screenplay]) -> dict:
    predictions = predict_corpus(model, movies)
    return metric_report({p.movie_id: p.tp_scene_windows for p in predictions}, movies)


def _run_fold(args) -> dict:
    fold, train_set, test_set, config = args
    for movie in test_set:
        if movie.gold_labels is None:
            raise DataError(f"fold {fold}: test movie {movie.movie_id} has no gold labels")
    result = train(train_set, config)
    report = evaluate_model(result.model, test_set)
    return {
        "fold": fold,
        "train_movies": [m.movie_id for m in train_set],
        "test_movies": [m.movie_id for m in test_set],
        "metrics": report["aggregate"],
        "report": report,
        "final_loss": result.history[-1].to_dict() if result.history else None,
    }


def cross_validate(corpus: Sequence[Screenplay], k: int, config: TrainConfig, jobs: int = 1) -> dict:
    """Train k models on k-1 folds each and score the held-out fold."""
    if k < 2:
        raise ParameterError("cross-validation needs at least two folds")
    folds = split_folds(corpus, k, config.seed)
    for fold, (_, test_set) in enumerate(folds):
        missing = [m.movie_id for m in test_set if m.gold_labels is None]
        if missing:
            raise DataError(f"fold {fold}: test movies without gold labels: {missing}")
    tasks = [(i, tr, te, config) for i, (tr, te) in enumerate(folds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_fold = list(pool.map(_run_fold, tasks))
    else:
        per_fold = [_run_fold(t) for t in tasks]
    aggregate = {m: float(np.mean([f["metrics"][m] for f in per_fold])) for m in ("TA", "PA", "D")}
    return {"k": k, "folds": per_fold, "aggregate": aggregate,
            "aggregate_percent": {m: 100.0 * v for m, v in aggregate.items()}}


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: GraphTP, path, epoch: int | None = None) -> Path:
    """JSON manifest plus a little-endian float64 blob indexed by name -> (offset, shape)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    index, chunks, offset = {}, [], 0
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name].data, dtype="<f8")
        index[name] = {"offset": offset, "shape": list(arr.shape)}
        chunks.append(arr.tobytes())
        offset += arr.size
    (root / CHECKPOINT_BLOB).write_bytes(b"".join(chunks))
    manifest = {
        "config": model.config.to_dict(),
        "dims": model.dims,
        "epoch": epoch,
        "seed": model.config.seed,
        "dtype": "<f8",
        "params": index,
    }
    (root / CHECKPOINT_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return root


def load_checkpoint(path) -> GraphTP:
    root = Path(path)
    try:
        manifest = json.loads((root / CHECKPOINT_MANIFEST).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{root / CHECKPOINT_MANIFEST}:{exc.lineno}: malformed JSON") from None
    blob = np.frombuffer((root / CHECKPOINT_BLOB).read_bytes(), dtype="<f8")
    config = TrainConfig.from_dict(manifest["config"])
    params = {}
    for name, entry in manifest["params"].items():
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        if start + size > blob.size:
            raise ValidationError(f"checkpoint blob too short for parameter {name!r}")
        params[name] = Tensor(blob[start:start + size].reshape(entry["shape"]).astype(np.float64),
                              requires_grad=True, name=name)
    model = GraphTP(config, manifest["dims"], params=params)
    expected = set(GraphTP(config, manifest["dims"]).params)
    if set(params) != expected:
        raise ValidationError(f"checkpoint parameters differ from the model: {sorted(set(params) ^ expected)}")
    return model
