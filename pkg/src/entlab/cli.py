"""Command-line entry point: ``entlab <command> [flags]``.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O error,
3 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import experiments as ex
from .core import DivergenceError, InvalidInputError, SeededRng
from .data import CorpusFormatError, gen_cipher_corpus, read_corpus, split_corpus, write_corpus
from .model import CheckpointError, ModelConfig, load_checkpoint, save_checkpoint
from .noise import NoiseSpec, inject
from .objectives import ObjectiveConfig, Strategy
from .training import (DYNAMICS_COLUMNS, METRICS_COLUMNS, TrainConfig, histogram_edges,
                       separation_from_scores, sequence_metrics, teacher_forced, train)

log = logging.getLogger("entlab")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# run config


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    train_path: Path
    eval_paths: dict
    noise: NoiseSpec | None


_SECTIONS = {"model", "train", "objective", "data", "noise"}
_MODEL_KEYS = {"vocab_size", "embed_dim", "hidden_dim", "context_window", "use_source"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"objective"}
_OBJECTIVE_KEYS = {f.name for f in fields(ObjectiveConfig)}
_DATA_KEYS = {"train", "eval"}
_NOISE_KEYS = {"kind", "rate", "seed", "mode"}


def _reject_unknown(section, obj, allowed):
    if not isinstance(obj, dict):
        raise UsageError(f"config section '{section}' must be an object")
    for key in obj:
        if key not in allowed:
            raise UsageError(f"unknown config key '{section}.{key}'" if section else f"unknown config key '{key}'")


def load_run_config(path) -> tuple[RunConfig, "object"]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from None
    _reject_unknown("", raw, _SECTIONS)
    for name, allowed in (("model", _MODEL_KEYS), ("train", _TRAIN_KEYS), ("objective", _OBJECTIVE_KEYS),
                          ("data", _DATA_KEYS), ("noise", _NOISE_KEYS)):
        if name in raw:
            _reject_unknown(name, raw[name], allowed)
    data = raw.get("data", {})
    if "train" not in data:
        raise UsageError("config key 'data.train' is required")
    base = path.parent
    eval_raw = data.get("eval", {})
    if isinstance(eval_raw, str):
        eval_raw = {"eval": eval_raw}
    eval_paths = {name: (base / p).resolve() for name, p in eval_raw.items()}
    train_path = (base / data["train"]).resolve()
    corpus = read_corpus(train_path)
    model_raw = dict(ex.DESK_MODEL)
    model_raw.update(raw.get("model", {}))
    model_raw.setdefault("vocab_size", len(corpus.vocab))
    try:
        objective = ObjectiveConfig(**raw.get("objective", {}))
        train_cfg = TrainConfig(**{**_desk_train_dict(), **raw.get("train", {}), "objective": objective})
        model_cfg = ModelConfig(**model_raw)
        noise = NoiseSpec(**raw["noise"]) if "noise" in raw else None
    except (InvalidInputError, ValueError, TypeError) as exc:
        raise UsageError(f"invalid config value: {exc}") from None
    if model_cfg.vocab_size != len(corpus.vocab):
        raise UsageError(f"model.vocab_size={model_cfg.vocab_size} but the corpus has {len(corpus.vocab)} tokens")
    return RunConfig(model_cfg, train_cfg, train_path, eval_paths, noise), corpus


def _desk_train_dict():
    return {f.name: getattr(ex.DESK_TRAIN, f.name) for f in fields(TrainConfig) if f.name != "objective"}


# --------------------------------------------------------------------------
# helpers


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _floats(text, name):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--{name} expects comma-separated numbers") from None


def _ints(text, name):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--{name} expects comma-separated integers") from None


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _figure(fn, *args, enabled=True, **kwargs):
    if not enabled:
        return
    from . import plotting

    getattr(plotting, fn)(*args, **kwargs)


# --------------------------------------------------------------------------
# commands


def cmd_gen_data(args):
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if args.heldout_n < 0:
        raise UsageError("--heldout-n must be >= 0")
    if args.heldout_n and not args.heldout_out:
        raise UsageError("--heldout-n needs --heldout-out")
    try:
        corpus = gen_cipher_corpus(args.alphabet, args.n + args.heldout_n, (args.len_min, args.len_max),
                                   SeededRng(args.seed))
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None
    if args.heldout_n:
        corpus, heldout = split_corpus(corpus, args.heldout_n)
        write_corpus(heldout, args.heldout_out)
    write_corpus(corpus, args.out)
    return EXIT_OK


def cmd_inject_noise(args):
    if not 0.0 <= args.rate <= 1.0:
        raise UsageError("--rate must lie in [0, 1]")
    corpus = read_corpus(args.input)
    try:
        spec = NoiseSpec(args.kind, args.rate, args.seed, args.mode)
        noisy = inject(corpus, spec)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None
    write_corpus(noisy, args.out)
    return EXIT_OK


def cmd_train(args):
    cfg, corpus = load_run_config(args.config)
    if cfg.noise is not None:
        corpus = inject(corpus, cfg.noise)
    evals = {name: read_corpus(p) for name, p in cfg.eval_paths.items()} or {"train": corpus}
    for name, split in evals.items():
        if len(split.vocab) != cfg.model.vocab_size:
            raise UsageError(f"eval split '{name}' has a different vocabulary size")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = train(corpus, cfg.model, cfg.train, evals)
    except DivergenceError as exc:
        (out / "dynamics.csv").write_text(_csv_text(
            DYNAMICS_COLUMNS, ([getattr(r, c) for c in DYNAMICS_COLUMNS] for r in exc.records)), encoding="utf-8")
        raise
    save_checkpoint(out / "checkpoint.bin", cfg.model, result.params, result.optimizer)
    (out / "dynamics.csv").write_text(_csv_text(
        DYNAMICS_COLUMNS, ([getattr(r, c) for c in DYNAMICS_COLUMNS] for r in result.dynamics)), encoding="utf-8")
    (out / "metrics.csv").write_text(_csv_text(
        METRICS_COLUMNS, ([getattr(m, c) for c in METRICS_COLUMNS] for m in result.metrics)), encoding="utf-8")
    _figure("plot_dynamics", result.dynamics, out / "dynamics.png",
            title=cfg.train.objective.label, enabled=not args.no_figures)
    final_it = result.metrics[-1].iteration if result.metrics else len(result.dynamics)
    _emit({m.split: m.to_dict() for m in result.metrics if m.iteration == final_it})
    return EXIT_OK


def _load_model_and_corpus(checkpoint, corpus_path):
    config, params, _ = load_checkpoint(checkpoint)
    corpus = read_corpus(corpus_path)
    if len(corpus.vocab) != config.vocab_size:
        raise UsageError(f"checkpoint has V={config.vocab_size} but corpus has V={len(corpus.vocab)}")
    return config, params, corpus


def cmd_eval(args):
    config, params, corpus = _load_model_and_corpus(args.checkpoint, args.corpus)
    if len(corpus) == 0:
        raise UsageError("corpus is empty")
    _emit(sequence_metrics(params, config, corpus, args.split).to_dict())
    return EXIT_OK


def highlight_levels(l2, thresholds):
    """0 below the first threshold, 1 from the first, 2 from the second, and so on."""
    return np.searchsorted(np.sort(np.asarray(thresholds, dtype=np.float64)), l2, side="right")


def cmd_score(args):
    config, params, corpus = _load_model_and_corpus(args.checkpoint, args.corpus)
    thresholds = _floats(args.highlight, "highlight")
    if not thresholds:
        raise UsageError("--highlight needs at least one threshold")
    tf = teacher_forced(params, config, corpus)
    levels = highlight_levels(tf["l2"], thresholds)
    vocab = corpus.vocab
    rows = (
        (int(e), int(p), vocab.token(int(t)), float(a), float(b), float(c), float(d),
         "noisy" if n else "clean", int(h))
        for e, p, t, a, b, c, d, n, h in zip(tf["example"], tf["position"], tf["target"], tf["nll"],
                                             tf["l1"], tf["l2"], tf["renyi2"], tf["noisy"], levels)
    )
    header = ("example_id", "position", "token", "nll", "l1", "l2", "renyi2", "noise_label", "highlight_level")
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    out = Path(args.out)
    out.write_text(buf.getvalue(), encoding="utf-8")
    noisy = tf["noisy"].astype(bool)
    if noisy.any() and not noisy.all():
        hist_path = Path(args.hist_out) if args.hist_out else out.with_suffix(".hist.csv")
        edges = histogram_edges(tf["l2"], args.bins)
        clean_h = np.histogram(tf["l2"][~noisy], edges)[0] / (~noisy).sum()
        noisy_h = np.histogram(tf["l2"][noisy], edges)[0] / noisy.sum()
        centers = 0.5 * (edges[:-1] + edges[1:])
        hist_path.write_text(_csv_text(("score", "clean_density", "noisy_density"),
                                       zip(centers.tolist(), clean_h.tolist(), noisy_h.tolist())),
                             encoding="utf-8")
        _figure("plot_separation", tf["nll"], tf["l2"], noisy, out.with_suffix(".hist.png"),
                bins=args.bins, enabled=not args.no_figures)
        _emit(separation_from_scores(tf["nll"], tf["l2"], tf["l1"], noisy, args.bins).to_dict())
    return EXIT_OK


def _sweep_objectives(args):
    overrides = {"fraction": args.fraction, "threshold": args.threshold, "gamma": args.gamma,
                 "weight_floor": args.weight_floor, "start_iteration": args.start_iteration}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    objs = []
    for name in (s.strip() for s in args.strategies.split(",") if s.strip()):
        try:
            objs.append(ObjectiveConfig(strategy=Strategy(name), **overrides))
        except ValueError as exc:
            raise UsageError(f"bad strategy {name!r}: {exc}") from None
    return objs


def cmd_sweep(args):
    seeds = _ints(args.seeds, "seeds")
    train_corpus = read_corpus(args.train)
    eval_corpus = read_corpus(args.eval)
    model_cfg, train_cfg = None, ex.DESK_TRAIN
    if args.config:
        cfg, _ = load_run_config(args.config)
        model_cfg, train_cfg = cfg.model, cfg.train
    try:
        if args.mode == "noise-robustness":
            kinds = [k for k in args.kinds.split(",") if k]
            rates = _floats(args.rates, "rates")
            objs = _sweep_objectives(args)
            if not (kinds and rates and objs and seeds):
                raise UsageError("empty sweep grid")
            rows = ex.noise_robustness(train_corpus, eval_corpus, kinds, rates, objs, seeds,
                                       model_cfg, train_cfg, args.noise_mode, args.workers)
        else:
            fractions = _floats(args.fractions, "fractions")
            methods = [m for m in args.methods.split(",") if m]
            if not (fractions and methods and seeds):
                raise UsageError("empty sweep grid")
            noise = NoiseSpec(args.noise_kind, args.noise_rate, 0, args.noise_mode) if args.noise_kind else None
            rows = ex.prune_retrain(train_corpus, eval_corpus, noise, fractions, seeds, methods,
                                    model_cfg, train_cfg, args.workers)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None
    ex.write_results(rows, args.out)
    _figure("plot_sweep", rows, Path(args.out).with_suffix(".png"), enabled=not args.no_figures)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    p = Parser(prog="entlab", description="Error-norm truncation desk laboratory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    g = sub.add_parser("gen-data", help="write a cipher-translation corpus")
    g.add_argument("--alphabet", type=int, default=26)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--len-min", type=int, default=4)
    g.add_argument("--len-max", type=int, default=12)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--heldout-n", type=int, default=0, help="extra examples written to --heldout-out")
    g.add_argument("--heldout-out")
    g.set_defaults(func=cmd_gen_data)

    n = sub.add_parser("inject-noise", help="corrupt a corpus")
    n.add_argument("--input", required=True)
    n.add_argument("--out", required=True)
    n.add_argument("--kind", choices=("copy", "shuffle", "substitution"), required=True)
    n.add_argument("--rate", type=float, required=True)
    n.add_argument("--mode", choices=("replace", "append"), default="replace")
    n.add_argument("--seed", type=int, default=0)
    n.set_defaults(func=cmd_inject_noise)

    t = sub.add_parser("train", help="train from a JSON run config")
    t.add_argument("config")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--no-figures", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--split", default="eval")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("score", help="per-token quality report")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True, help="TSV report path")
    s.add_argument("--highlight", default="1.0,1.3")
    s.add_argument("--bins", type=int, default=32)
    s.add_argument("--hist-out")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_score)

    w = sub.add_parser("sweep", help="noise-robustness or prune-retrain sweep")
    w.add_argument("--mode", choices=("noise-robustness", "prune-retrain"), required=True)
    w.add_argument("--train", required=True, help="clean training corpus")
    w.add_argument("--eval", required=True, help="clean held-out corpus")
    w.add_argument("--out", required=True, help="results.csv path")
    w.add_argument("--config", help="run config supplying model/train sections")
    w.add_argument("--seeds", default="0,1,2")
    w.add_argument("--kinds", default="copy,shuffle")
    w.add_argument("--rates", default="0,0.1,0.2,0.3,0.4,0.5")
    w.add_argument("--strategies", default="MLE,LOSS_TRUNC,TAILR,ENT_FRACTION,ENT_THRESHOLD")
    w.add_argument("--noise-mode", choices=("replace", "append"), default="append")
    w.add_argument("--fraction", type=float)
    w.add_argument("--threshold", type=float)
    w.add_argument("--gamma", type=float)
    w.add_argument("--weight-floor", type=float)
    w.add_argument("--start-iteration", type=int)
    w.add_argument("--fractions", default="0.1,0.2,0.3,0.4,0.5,0.6")
    w.add_argument("--methods", default=",".join(ex.PRUNE_METHODS))
    w.add_argument("--noise-kind", choices=("copy", "shuffle", "substitution"))
    w.add_argument("--noise-rate", type=float, default=0.2)
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--no-figures", action="store_true")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidInputError, CorpusFormatError, CheckpointError) as exc:
        print(f"entlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"entlab: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"entlab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
