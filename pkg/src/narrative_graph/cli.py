"""``narrative-graph`` command line: generate, train, evaluate, predict, baseline, crossval, analyze.

Every subcommand writes its outputs plus ``run_manifest.json`` (resolved
configuration, seed, package version, arguments) into ``--out``.  Exit codes:
0 success, 1 validation or usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .baselines import BASELINES, run_baseline
from .config import MODALITY_ALIASES, TrainConfig
from .datamodel import MANIFEST, SyntheticSpec, generate_synthetic, load_corpus, save_corpus
from .errors import NarrativeGraphError, ValidationError
from .evalmetrics import metric_report
from .gcn_tp import export_predictions
from .graphanalytics import analyze_graph, export_graph, genre_summary, write_report_csv
from .training import cross_validate, load_checkpoint, predict_corpus, save_checkpoint, train

log = logging.getLogger("narrative_graph")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
BASELINE_ALIASES = {"random": "random_even", "theory": "theory_position", "distribution": "distribution_position"}
RUN_MANIFEST = "run_manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this CLI reserves 2 for I/O errors."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _read_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}:{exc.lineno}: malformed JSON") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{p}: config must be a flat JSON object")
    known = set(TrainConfig.__dataclass_fields__) | set(SyntheticSpec.__dataclass_fields__)
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValidationError(f"{p}: unknown config keys {unknown}")
    return doc


def resolve_train_config(args) -> TrainConfig:
    """Defaults, then the --config file, then explicit flags."""
    values = {k: v for k, v in _read_config_file(args.config).items() if k in TrainConfig.__dataclass_fields__}
    flags = {
        "seed": args.seed, "modality": args.modality, "lam": args.lam, "tau": args.tau,
        "max_neighbors": args.max_neighbors, "window": args.window, "epochs": args.epochs,
    }
    values.update({k: v for k, v in flags.items() if v is not None})
    return TrainConfig.from_dict(values)


def resolve_synthetic_spec(args) -> SyntheticSpec:
    values = {k: v for k, v in _read_config_file(args.config).items() if k in SyntheticSpec.__dataclass_fields__}
    if args.seed is not None:
        values["seed"] = args.seed
    if args.movies is not None:
        values["movie_count"] = args.movies
    spec = SyntheticSpec.from_dict(values)
    spec.validate()
    return spec


def _manifest(args, **extra) -> dict:
    doc = {
        "version": __version__,
        "subcommand": args.command,
        "arguments": {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "handler")},
    }
    doc.update(extra)
    return doc


def _require_corpus(path: str | None) -> Path:
    if path is None:
        raise UsageError("--corpus is required")
    p = Path(path)
    if not (p / MANIFEST).is_file():
        raise FileNotFoundError(f"{p}: not a corpus directory (missing {MANIFEST})")
    return p


def _require_checkpoint(path: str | None) -> Path:
    if path is None:
        raise UsageError("--checkpoint is required")
    p = Path(path)
    if not p.is_dir():
        raise FileNotFoundError(f"{p}: checkpoint directory not found")
    return p


def _out_dir(path: str | None) -> Path:
    if path is None:
        raise UsageError("--out is required")
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    spec = resolve_synthetic_spec(args)
    out = _out_dir(args.out)
    corpus = generate_synthetic(spec)
    save_corpus(corpus, out)
    _write_json(out / RUN_MANIFEST, _manifest(args, synthetic_spec=dataclasses.asdict(spec), seed=spec.seed))
    log.info("wrote %d movies to %s", len(corpus), out)
    return EXIT_OK


def cmd_train(args) -> int:
    corpus_path = _require_corpus(args.corpus)
    config = resolve_train_config(args)
    out = _out_dir(args.out)
    corpus = load_corpus(corpus_path)
    result = train(corpus, config)
    save_checkpoint(result.model, out, epoch=result.best_epoch)
    _write_json(out / "history.json", [h.to_dict() for h in result.history])
    _write_json(out / RUN_MANIFEST, _manifest(args, config=config.to_dict(), seed=config.seed,
                                              best_epoch=result.best_epoch))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    corpus_path = _require_corpus(args.corpus)
    ckpt = _require_checkpoint(args.checkpoint)
    out = _out_dir(args.out)
    model = load_checkpoint(ckpt)
    movies = load_corpus(corpus_path)
    predictions = predict_corpus(model, movies)
    report = metric_report({p.movie_id: p.tp_scene_windows for p in predictions}, movies)
    _write_json(out / "metrics.json", report)
    _write_json(out / RUN_MANIFEST, _manifest(args, config=model.config.to_dict(), seed=model.config.seed))
    print(json.dumps(report["aggregate_percent"], sort_keys=True))
    return EXIT_OK


def cmd_predict(args) -> int:
    corpus_path = _require_corpus(args.corpus)
    ckpt = _require_checkpoint(args.checkpoint)
    out = _out_dir(args.out)
    model = load_checkpoint(ckpt)
    export_predictions(predict_corpus(model, load_corpus(corpus_path)), out / "predictions.json")
    _write_json(out / RUN_MANIFEST, _manifest(args, config=model.config.to_dict(), seed=model.config.seed))
    return EXIT_OK


def cmd_baseline(args) -> int:
    name = BASELINE_ALIASES.get(args.name, args.name)
    if name not in BASELINES:
        raise UsageError(f"unknown baseline {args.name!r}; choose from {sorted(set(BASELINES) | set(BASELINE_ALIASES))}")
    corpus_path = _require_corpus(args.corpus)
    train_path = _require_corpus(args.train_corpus) if args.train_corpus else None
    model = load_checkpoint(_require_checkpoint(args.checkpoint)) if args.checkpoint else None
    out = _out_dir(args.out)
    movies = load_corpus(corpus_path)
    train_corpus = load_corpus(train_path) if train_path else None
    if name == "distribution_position" and train_corpus is None:
        log.warning("distribution_position: no --train-corpus given; anchors are learned from the scored corpus")
    seed = args.seed if args.seed is not None else 0
    predictions = run_baseline(name, movies, seed=seed, train_corpus=train_corpus, model=model)
    export_predictions(predictions, out / "predictions.json")
    result = {"baseline": name, "seed": seed}
    if all(m.gold_labels is not None for m in movies):
        report = metric_report({p.movie_id: p.tp_scene_windows for p in predictions}, movies)
        _write_json(out / "metrics.json", {**report, "baseline": name})
        result["aggregate_percent"] = report["aggregate_percent"]
    _write_json(out / RUN_MANIFEST, _manifest(args, baseline=name, seed=seed))
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_crossval(args) -> int:
    corpus_path = _require_corpus(args.corpus)
    config = resolve_train_config(args)
    out = _out_dir(args.out)
    folds = args.folds if args.folds is not None else 5
    report = cross_validate(load_corpus(corpus_path), folds, config, jobs=args.jobs or 1)
    _write_json(out / "crossval.json", report)
    _write_json(out / RUN_MANIFEST, _manifest(args, config=config.to_dict(), seed=config.seed, folds=folds))
    print(json.dumps(report["aggregate_percent"], sort_keys=True))
    return EXIT_OK


def cmd_analyze(args) -> int:
    corpus_path = _require_corpus(args.corpus)
    ckpt = _require_checkpoint(args.checkpoint)
    out = _out_dir(args.out)
    graphs = out / "graphs"
    graphs.mkdir(exist_ok=True)
    model = load_checkpoint(ckpt)
    reports = []
    for movie in load_corpus(corpus_path):
        forward = model.forward(movie, training=False)
        windows = model.predict(movie).tp_scene_windows
        report, pruned = analyze_graph(forward.graph, windows, movie.movie_id, movie.genre)
        reports.append(report)
        export_graph(pruned, graphs / f"{movie.movie_id}.dot", "dot", movie.movie_id)
        export_graph(pruned, graphs / f"{movie.movie_id}.json", "json")
    write_report_csv(reports, out / "topology.csv")
    _write_json(out / "topology.json", [r.to_dict() for r in reports])
    _write_json(out / "genre_summary.json", genre_summary(reports))
    _write_json(out / RUN_MANIFEST, _manifest(args, config=model.config.to_dict(), seed=model.config.seed))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", help="corpus directory (manifest.json plus one JSON per movie)")
    p.add_argument("--checkpoint", help="checkpoint directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="flat JSON file of TrainConfig / SyntheticSpec keys; flags override it")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--modality", choices=sorted(MODALITY_ALIASES))
    p.add_argument("--lambda", dest="lam", type=float, help="focal regulariser weight")
    p.add_argument("--tau", type=float, help="neighbour softmax temperature")
    p.add_argument("--max-neighbors", dest="max_neighbors", type=int)
    p.add_argument("--window", type=int, help="scenes per TP summary window")
    p.add_argument("--epochs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="narrative-graph", description="Turning-point identification with learned scene graphs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", help="write a synthetic corpus")
    _common(p)
    p.add_argument("--movies", type=int, help="override movie_count")
    p.set_defaults(handler=cmd_generate)

    for name, handler, help_text in (("train", cmd_train, "train GraphTP and save a checkpoint"),
                                     ("crossval", cmd_crossval, "k-fold cross-validation")):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        _model_flags(p)
        if name == "crossval":
            p.add_argument("--folds", type=int)
            p.add_argument("--jobs", type=int, help="folds run concurrently")
        p.set_defaults(handler=handler)

    for name, handler, help_text in (("evaluate", cmd_evaluate, "TA/PA/D of a checkpoint"),
                                     ("predict", cmd_predict, "export TP predictions"),
                                     ("analyze", cmd_analyze, "graph topology report")):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.set_defaults(handler=handler)

    p = sub.add_parser("baseline", help="run a baseline")
    p.add_argument("name", help=f"one of {', '.join(BASELINES)} (or random, theory, distribution)")
    _common(p)
    p.add_argument("--train-corpus", help="corpus used to learn anchors for distribution_position")
    p.set_defaults(handler=cmd_baseline)
    return parser


def _configure_logging() -> None:
    level_name = os.environ.get("NARRATIVE_GRAPH_LOG", "warn").lower()
    level = LOG_LEVELS.get(level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if level_name not in LOG_LEVELS:
        log.warning("NARRATIVE_GRAPH_LOG=%r not recognised; using warn", level_name)


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
        return args.handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NarrativeGraphError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
