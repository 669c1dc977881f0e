"""Command-line entry point: ``tracecls <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data/validation error.  Every
subcommand writes its outputs plus a ``run.json`` under ``--out``.  Option
defaults can be overridden with ``TRACECLS_<OPTION>`` environment variables
(e.g. ``TRACECLS_SEED=3``, ``TRACECLS_K="400 100"``).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .errors import FingerprintMismatch, SchemaError, TraceclsError
from .evaluation import (
    LAMBDA_GRID,
    ClassifierConfig,
    SplitSpec,
    cross_validate,
    leave_one_family_out_table,
    majority_vote,
    rates,
    read_verdicts,
    repeated_split_eval,
    roc_points_csv,
    train_classifier,
    votes_csv,
)
from .featurize import (
    BinaryDataset,
    DatasetRow,
    check_fingerprint,
    dataset_jsonl,
    fit_vocabulary,
    read_dataset,
    read_vocabulary,
    report_features,
    transform,
)
from .ingest import REPORT_SUFFIX, corpus_fingerprint, load_corpus, parse_report, serialize_report
from .models import load_model, model_to_dict, predict_labels, score_dataset
from .select import breakdown_csv, rank_features, ranking_csv, select_top
from .synth import FamilySpec, SynthConfig, DEFAULT_FAMILIES, MODES, write_corpus

ENV_PREFIX = "TRACECLS_"
DATASET_FILE = "dataset.jsonl"
VOCAB_FILE = "vocabulary.json"
# execution-only options: they never change results, so run.json omits them
_NOT_ECHOED = {"command", "out", "jobs", "func", "env_problems"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class _Outputs:
    def __init__(self, out: str):
        self.root = Path(out)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hashes: dict[str, str] = {}

    def write(self, name: str, text: str) -> Path:
        path = self.root / name
        data = text.encode("utf-8")
        path.write_bytes(data)
        self.hashes[name] = hashlib.sha256(data).hexdigest()
        return path

    def write_json(self, name: str, doc) -> Path:
        return self.write(name, json.dumps(doc, indent=1, sort_keys=True) + "\n")

    def finish(self, args: argparse.Namespace, fingerprints: Optional[dict] = None) -> None:
        config = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_ECHOED}
        doc = {
            "tool": "tracecls",
            "version": __version__,
            "command": args.command,
            "config": config,
            "fingerprints": fingerprints or {},
            "artifacts": dict(sorted(self.hashes.items())),
        }
        (self.root / "run.json").write_bytes((json.dumps(doc, indent=1, sort_keys=True) + "\n").encode("utf-8"))


# ---------------------------------------------------------------------------
# input resolution
# ---------------------------------------------------------------------------


def _load_dataset(path: str) -> tuple[BinaryDataset, Optional[object]]:
    """Read a dataset file or directory; cross-check the sibling vocabulary."""
    p = Path(path)
    data_file = p / DATASET_FILE if p.is_dir() else p
    if not data_file.is_file():
        raise SchemaError(f"no dataset found at {path}")
    dataset = read_dataset(data_file)
    vocab_file = data_file.parent / VOCAB_FILE
    vocab = None
    if vocab_file.is_file():
        vocab = read_vocabulary(vocab_file)
        check_fingerprint(vocab.fingerprint, dataset.vocabulary_fingerprint, str(data_file))
    return dataset, vocab


def _classifier_config(args) -> ClassifierConfig:
    return ClassifierConfig(
        kind=args.classifier,
        lam=args.lam,
        C=args.C,
        alpha=args.alpha,
        learning_rate=args.learning_rate,
        max_iters=args.max_iters,
        tol=args.tol,
        epochs=args.epochs,
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    families = tuple(FamilySpec(n, c) for n, c in DEFAULT_FAMILIES)
    config = SynthConfig(
        seed=args.seed,
        n_goodware=args.n_goodware,
        families=families,
        n_core_signal=args.n_core,
        n_family_signal=args.n_family_signal,
        p_signal_ransomware=args.p_ransomware,
        p_signal_goodware=args.p_goodware,
        background_density=args.density,
        mode=args.mode,
        core_block_size=args.core_block_size,
        core_flip=args.core_flip,
    )
    out = _Outputs(args.out)
    reports, _ = write_corpus(config, out.root)
    for name in ("plantation.json", "manifest.csv"):
        out.hashes[name] = hashlib.sha256((out.root / name).read_bytes()).hexdigest()
    out.finish(args, {"corpus": corpus_fingerprint(reports)})
    return 0


def cmd_ingest(args) -> int:
    reports, summary = load_corpus(args.input, discard_empty=not args.keep_empty)
    out = _Outputs(args.out)
    for report in reports:
        out.write(f"{report.sample_id}{REPORT_SUFFIX}", serialize_report(report).decode("utf-8"))
    out.write_json(
        "ingest_summary.json",
        {"loaded": summary.loaded, "discarded": summary.discarded, "discarded_ids": list(summary.discarded_ids)},
    )
    out.finish(args, {"corpus": corpus_fingerprint(reports)})
    return 0


def cmd_featurize(args) -> int:
    reports, summary = load_corpus(args.input, discard_empty=not args.keep_empty)
    vocab = fit_vocabulary(reports)
    dataset = transform(reports, vocab)
    cfp = corpus_fingerprint(reports)
    out = _Outputs(args.out)
    out.write_json(VOCAB_FILE, vocab.to_dict())
    out.write(DATASET_FILE, dataset_jsonl(dataset, cfp))
    out.finish(
        args,
        {"corpus": cfp, "vocabulary": vocab.fingerprint, "discarded": summary.discarded, "n_features": len(vocab)},
    )
    return 0


def cmd_select(args) -> int:
    dataset, vocab = _load_dataset(args.dataset)
    if vocab is None:
        raise SchemaError(f"select needs {VOCAB_FILE} next to the dataset")
    ranking = rank_features(dataset)
    out = _Outputs(args.out)
    out.write("ranking.csv", ranking_csv(ranking, vocab))
    out.write("breakdown.csv", breakdown_csv(ranking, vocab, args.k))
    out.write_json("selected.json", {f"top_{k}": list(select_top(ranking, k)) for k in args.k})
    out.finish(args, {"vocabulary": vocab.fingerprint, "dataset": dataset.fingerprint()})
    return 0


def cmd_train(args) -> int:
    dataset, vocab = _load_dataset(args.dataset)
    selected = select_top(rank_features(dataset), args.k)
    names = None if vocab is None else [vocab.names[c] for c in selected]
    model = train_classifier(dataset, selected, _classifier_config(args), args.seed, names)
    out = _Outputs(args.out)
    out.write_json("model.json", model_to_dict(model))
    out.finish(args, {"vocabulary": dataset.vocabulary_fingerprint, "dataset": dataset.fingerprint()})
    return 0


def _predict_inputs(args, model) -> BinaryDataset:
    src = Path(args.input)
    if src.suffix == ".jsonl":
        dataset = read_dataset(src)
        check_fingerprint(model.vocabulary_fingerprint, dataset.vocabulary_fingerprint, str(src))
        return dataset
    if src.is_dir():
        reports, _ = load_corpus(src, discard_empty=False)
    else:
        reports = [parse_report(src.read_bytes())] if src.is_file() else None
        if reports is None:
            raise SchemaError(f"no such input {src}")
    if args.vocab:
        vocab = read_vocabulary(args.vocab)
        check_fingerprint(model.vocabulary_fingerprint, vocab.fingerprint, f"vocabulary {args.vocab}")
        return transform(reports, vocab, require_labels=False)
    if model.selected_names is None:
        raise SchemaError("model carries no feature names; pass --vocab")
    lookup = dict(zip(model.selected_names, model.selected))
    width = (model.selected[-1] + 1) if model.selected else 0
    rows = []
    for r in reports:
        present = tuple(sorted(lookup[n] for n in report_features(r) if n in lookup))
        label = None if r.label is None else int(r.label == "ransomware")
        rows.append(DatasetRow(r.sample_id, label, r.family, present))
    return BinaryDataset(model.vocabulary_fingerprint, width, tuple(rows))


def cmd_predict(args) -> int:
    try:
        model = load_model(args.model)
    except (OSError, ValueError) as exc:
        raise SchemaError(f"cannot read model {args.model}: {exc}") from None
    dataset = _predict_inputs(args, model)
    scores = score_dataset(model, dataset)
    labels = predict_labels(model, dataset)
    lines = ["sample_id,score,label"]
    lines += [f"{sid},{float(s)!r},{int(y)}" for sid, s, y in zip(dataset.sample_ids, scores, labels)]
    out = _Outputs(args.out)
    out.write("predictions.csv", "\n".join(lines) + "\n")
    out.finish(args, {"vocabulary": model.vocabulary_fingerprint})
    return 0


def cmd_eval(args) -> int:
    dataset, _ = _load_dataset(args.dataset)
    split = SplitSpec(seed=args.seed, repetitions=args.reps, train_fraction=args.train_fraction,
                      stratified=not args.no_stratify)
    report = repeated_split_eval(
        dataset, _classifier_config(args), split, args.k, select_on_full=args.select_on_full, jobs=args.jobs
    )
    out = _Outputs(args.out)
    out.write("eval_report.json", report.to_json())
    out.write("eval_metrics.csv", report.metrics_csv())
    out.write("roc.csv", roc_points_csv(report.mean_roc))
    out.finish(args, {"vocabulary": dataset.vocabulary_fingerprint, "dataset": dataset.fingerprint()})
    return 0


def cmd_cv(args) -> int:
    dataset, _ = _load_dataset(args.dataset)
    result = cross_validate(
        dataset, _classifier_config(args), args.grid, args.k, folds=args.folds, seed=args.seed, jobs=args.jobs
    )
    out = _Outputs(args.out)
    out.write("cv.json", result.to_json())
    out.finish(args, {"vocabulary": dataset.vocabulary_fingerprint, "dataset": dataset.fingerprint()})
    return 0


def cmd_loo(args) -> int:
    dataset, _ = _load_dataset(args.dataset)
    config = ClassifierConfig(kind="logreg", lam=args.lam, learning_rate=args.learning_rate,
                              max_iters=args.max_iters, tol=args.tol)
    table = leave_one_family_out_table(dataset, tuple(args.k), args.lam, config, jobs=args.jobs)
    out = _Outputs(args.out)
    out.write("loo.csv", table.csv())
    out.finish(args, {"vocabulary": dataset.vocabulary_fingerprint, "dataset": dataset.fingerprint()})
    return 0


def cmd_vote(args) -> int:
    try:
        text = Path(args.verdicts).read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"cannot read {args.verdicts}: {exc}") from None
    votes = majority_vote(read_verdicts(text))
    out = _Outputs(args.out)
    out.write("votes.csv", votes_csv(votes))
    fingerprints = {}
    if args.dataset:
        dataset, _ = _load_dataset(args.dataset)
        truth = {r.sample_id: r.label for r in dataset.rows if r.sample_id in votes and r.label is not None}
        ids = sorted(truth)
        out.write_json("vote_rates.json", {"n_samples": len(ids), **rates([votes[i] for i in ids], [truth[i] for i in ids])})
        fingerprints["dataset"] = dataset.fingerprint()
    out.finish(args, fingerprints)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_model_options(p, with_kind: bool = True) -> None:
    if with_kind:
        p.add_argument("--classifier", choices=("logreg", "nb", "svm"), default="logreg")
    p.add_argument("--lambda", dest="lam", type=float, default=2e-3, help="L2 strength for logreg")
    p.add_argument("--C", dest="C", type=float, default=2e-1, help="SVM cost parameter")
    p.add_argument("--alpha", type=float, default=1.0, help="NB Laplace smoothing")
    p.add_argument("--learning-rate", type=float, default=0.8)
    p.add_argument("--max-iters", type=int, default=4000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--epochs", type=int, default=50, help="SVM training epochs")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tracecls", description="Behavioral ransomware classification pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n-goodware", type=int, default=942)
    p.add_argument("--n-core", type=int, default=50)
    p.add_argument("--n-family-signal", type=int, default=8)
    p.add_argument("--p-ransomware", type=float, default=0.9)
    p.add_argument("--p-goodware", type=float, default=0.1)
    p.add_argument("--density", type=float, default=0.02)
    p.add_argument("--mode", choices=MODES, default="shared-core")
    p.add_argument("--core-block-size", type=int, default=0,
                   help="tie this many core tokens to one latent bit (dependence mode)")
    p.add_argument("--core-flip", type=float, default=0.05)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate and normalize a report directory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--keep-empty", action="store_true", help="keep reports without API calls")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("featurize", help="fit the vocabulary and emit the binary dataset")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--keep-empty", action="store_true")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("select", help="mutual-information ranking and class breakdown")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, nargs="+", default=[400, 100])
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", help="train one classifier on the whole dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    _add_model_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score reports or a dataset with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True, help="report file, report directory or dataset .jsonl")
    p.add_argument("--vocab", default=None, help="vocabulary.json used to featurize the reports")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="repeated random train/test splits")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, default=400)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--no-stratify", action="store_true")
    p.add_argument("--select-on-full", action="store_true",
                   help="select features once on the whole dataset instead of per split")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    _add_model_options(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="k-fold hyperparameter grid search")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, default=400)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--grid", type=float, nargs="+", default=list(LAMBDA_GRID))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    _add_model_options(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("loo", help="leave-one-family-out detection rates")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, nargs="+", default=[400, 100])
    p.add_argument("--lambda", dest="lam", type=float, default=2e-3)
    p.add_argument("--learning-rate", type=float, default=0.8)
    p.add_argument("--max-iters", type=int, default=4000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_loo)

    p = sub.add_parser("vote", help="majority vote over external verdicts")
    p.add_argument("--verdicts", required=True, help="CSV with columns sample_id,vendor,verdict")
    p.add_argument("--dataset", default=None, help="labeled dataset to score the votes against")
    p.set_defaults(func=cmd_vote)

    for name, subparser in sub.choices.items():
        subparser.add_argument("--out", required=True, help="output directory")
        _apply_env_defaults(subparser)
    return parser


def _apply_env_defaults(parser: argparse.ArgumentParser) -> None:
    # a bad value only matters for the subcommand that is actually run, so
    # conversion errors are parked on the subparser and raised after parsing
    problems = []
    for action in parser._actions:
        if not action.option_strings or action.dest in ("help",):
            continue
        name = ENV_PREFIX + action.dest.upper()
        raw = os.environ.get(name)
        if raw is None:
            continue
        try:
            if isinstance(action, argparse._StoreTrueAction):
                value = raw.strip().lower() in ("1", "true", "yes", "on")
            elif action.nargs in ("+", "*"):
                conv = action.type or str
                value = [conv(v) for v in raw.replace(",", " ").split()]
                if not value or (action.choices and any(v not in action.choices for v in value)):
                    raise ValueError(raw)
            else:
                value = (action.type or str)(raw)
                if action.choices and value not in action.choices:
                    raise ValueError(raw)
        except ValueError:
            problems.append(f"invalid value {raw!r} in {name}")
            continue
        action.default = value
        action.required = False
    parser.set_defaults(env_problems=problems)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        if getattr(args, "env_problems", None):
            raise UsageError(f"{parser.prog} {args.command}: {args.env_problems[0]}")
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except FingerprintMismatch as exc:
        print(f"tracecls: fingerprint mismatch: {exc}", file=sys.stderr)
        return 2
    except TraceclsError as exc:
        print(f"tracecls: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"tracecls: invalid value: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"tracecls: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
