"""Evaluation protocol: ROC/AUC, error rates, repeated random splits,
cross-validated hyperparameter grids, leave-one-family-out detection and
majority voting over external verdicts.

Every repetition, fold and held-out family derives its randomness from
``(seed, index)``, so results do not depend on worker count or scheduling.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import SchemaError, SingleClassLabels, TooFewSamples, UnknownFamily
from .featurize import BinaryDataset
from .models import (
    DEFAULT_LEARNING_RATE,
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    Model,
    logreg_train,
    nb_train,
    predict_labels,
    score_dataset,
    svm_train,
)
from .select import rank_features, select_top

CLASSIFIERS = ("logreg", "nb", "svm")
METRICS = ("auc", "test_error", "fp_rate", "detection_rate")
LAMBDA_GRID = tuple(2.0 * 10.0**p for p in range(-5, 0))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RocCurve:
    points: tuple[tuple[float, float], ...]  # (false-alarm rate, detection rate)
    auc: float

    def csv(self) -> str:
        return roc_points_csv(self.points)


def roc_points_csv(points: Iterable[tuple[float, float]]) -> str:
    lines = ["fa,det"] + [f"{fa!r},{det!r}" for fa, det in points]
    return "\n".join(lines) + "\n"


def _check_labels(labels: np.ndarray) -> None:
    if not (np.any(labels == 1) and np.any(labels == 0)):
        raise SingleClassLabels("both classes must be present")


def roc_and_auc(scores: Sequence[float], labels: Sequence[int]) -> RocCurve:
    """ROC with one vertex per distinct score and its trapezoidal area.

    Tied scores form a single diagonal step, so a tied positive/negative
    pair counts one half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    _check_labels(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = len(labels) - n_pos
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    # last index of every tie group
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y == 1)[ends]
    fp = np.cumsum(y == 0)[ends]
    fa = np.r_[0, fp] / n_neg
    det = np.r_[0, tp] / n_pos
    auc = float(np.sum((fa[1:] - fa[:-1]) * (det[1:] + det[:-1])) / 2.0)
    return RocCurve(tuple(zip(fa.tolist(), det.tolist())), auc)


def rates(predictions: Sequence[int], labels: Sequence[int]) -> dict[str, float]:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels differ in length")
    _check_labels(labels)
    tp = int(np.sum((predictions == 1) & (labels == 1)))
    fn = int(np.sum((predictions == 0) & (labels == 1)))
    fp = int(np.sum((predictions == 1) & (labels == 0)))
    tn = int(np.sum((predictions == 0) & (labels == 0)))
    return {
        "test_error": (fp + fn) / len(labels),
        "fp_rate": fp / (fp + tn),
        "detection_rate": tp / (tp + fn),
    }


def interpolate_roc(curve: RocCurve, grid: np.ndarray) -> np.ndarray:
    """Detection rate of the piecewise-linear ROC at each false-alarm value."""
    fa = np.array([p[0] for p in curve.points])
    det = np.array([p[1] for p in curve.points])
    out = np.empty(len(grid))
    for g, x in enumerate(grid):
        i = int(np.searchsorted(fa, x, side="right")) - 1
        if i >= len(fa) - 1 or fa[i] == x:
            out[g] = det[i]
        else:
            frac = (x - fa[i]) / (fa[i + 1] - fa[i])
            out[g] = det[i] + frac * (det[i + 1] - det[i])
    return out


def average_roc(curves: Sequence[RocCurve], n_points: int = 101) -> tuple[tuple[float, float], ...]:
    """Vertical average of several ROC curves on a uniform false-alarm grid."""
    grid = np.linspace(0.0, 1.0, n_points)
    mean = np.mean([interpolate_roc(c, grid) for c in curves], axis=0)
    return tuple(zip(grid.tolist(), mean.tolist()))


# ---------------------------------------------------------------------------
# classifier configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassifierConfig:
    kind: str = "logreg"
    lam: float = 2e-3
    C: float = 2e-1
    alpha: float = 1.0
    learning_rate: float = DEFAULT_LEARNING_RATE
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOL
    epochs: int = 50

    def __post_init__(self):
        if self.kind not in CLASSIFIERS:
            raise ValueError(f"classifier must be one of {CLASSIFIERS}")

    @property
    def hyperparameter(self) -> float:
        return {"logreg": self.lam, "svm": self.C, "nb": self.alpha}[self.kind]

    def with_hyperparameter(self, value: float) -> "ClassifierConfig":
        key = {"logreg": "lam", "svm": "C", "nb": "alpha"}[self.kind]
        return ClassifierConfig(**{**asdict(self), key: value})


def train_classifier(
    data: BinaryDataset, selected: Sequence[int], config: ClassifierConfig, seed: int = 0, names=None
) -> Model:
    if config.kind == "logreg":
        return logreg_train(
            data, selected, config.lam, config.learning_rate, config.max_iters, config.tol, names=names
        )
    if config.kind == "nb":
        return nb_train(data, selected, config.alpha, names=names)
    return svm_train(data, selected, config.C, config.epochs, seed, names=names)


# ---------------------------------------------------------------------------
# parallel map with deterministic ordering
# ---------------------------------------------------------------------------

_SHARED: dict = {}


def _init_worker(dataset: BinaryDataset) -> None:
    _SHARED["dataset"] = dataset


def _call_with_shared(args):
    fn, payload = args
    return fn(_SHARED["dataset"], *payload)


def _parallel_map(fn: Callable, dataset: BinaryDataset, payloads: Sequence[tuple], jobs: int) -> list:
    if jobs <= 1 or len(payloads) <= 1:
        return [fn(dataset, *p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(dataset,)) as pool:
        return list(pool.map(_call_with_shared, [(fn, p) for p in payloads]))


# ---------------------------------------------------------------------------
# repeated random splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    seed: int = 0
    repetitions: int = 100
    train_fraction: float = 0.8
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")


def make_split(labels: np.ndarray, spec: SplitSpec, repetition: int) -> tuple[np.ndarray, np.ndarray]:
    """Train/test index arrays (both sorted) for one repetition."""
    rng = np.random.default_rng([spec.seed, repetition])
    if spec.stratified:
        train = []
        for c in (0, 1):
            idx = rng.permutation(np.flatnonzero(labels == c))
            n_train = int(round(spec.train_fraction * len(idx)))
            if len(idx) >= 2:
                n_train = min(max(n_train, 1), len(idx) - 1)
            train.append(idx[:n_train])
        train = np.concatenate(train)
    else:
        idx = rng.permutation(len(labels))
        train = idx[: int(round(spec.train_fraction * len(labels)))]
    mask = np.zeros(len(labels), dtype=bool)
    mask[train] = True
    return np.flatnonzero(mask), np.flatnonzero(~mask)


@dataclass(frozen=True)
class RepetitionRecord:
    repetition: int
    auc: float
    test_error: float
    fp_rate: float
    detection_rate: float
    selected: tuple[int, ...] = field(repr=False)


@dataclass(frozen=True)
class EvalReport:
    config: dict
    records: tuple[RepetitionRecord, ...]
    mean_roc: tuple[tuple[float, float], ...] = ()

    @property
    def aggregate(self) -> dict[str, dict[str, float]]:
        out = {}
        for metric in METRICS:
            values = np.array([getattr(r, metric) for r in self.records])
            out[metric] = {"mean": float(np.mean(values)), "std": float(np.std(values))}
        return out

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "aggregate": self.aggregate,
            "records": [
                {**{m: getattr(r, m) for m in ("repetition", *METRICS)}, "selected": list(r.selected)}
                for r in self.records
            ],
            "mean_roc": [list(p) for p in self.mean_roc],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["repetition", *METRICS])
        for r in self.records:
            writer.writerow([r.repetition, *(repr(getattr(r, m)) for m in METRICS)])
        agg = self.aggregate
        writer.writerow(["mean", *(repr(agg[m]["mean"]) for m in METRICS)])
        writer.writerow(["std", *(repr(agg[m]["std"]) for m in METRICS)])
        return buf.getvalue()


def _selection(dataset: BinaryDataset, k: int) -> tuple[int, ...]:
    return select_top(rank_features(dataset), k)


def _run_repetition(
    dataset: BinaryDataset,
    config: ClassifierConfig,
    k: int,
    repetition: int,
    seed: int,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    full_selection: Optional[tuple[int, ...]],
):
    train = dataset.subset(train_idx)
    test = dataset.subset(test_idx)
    selected = full_selection if full_selection is not None else _selection(train, k)
    svm_seed = int(np.random.default_rng([seed, repetition, 1]).integers(2**31))
    model = train_classifier(train, selected, config, svm_seed)
    scores = score_dataset(model, test)
    y = test.labels
    curve = roc_and_auc(scores, y)
    r = rates(predict_labels(model, test), y)
    record = RepetitionRecord(repetition, curve.auc, r["test_error"], r["fp_rate"], r["detection_rate"], selected)
    return record, curve


def repeated_split_eval(
    dataset: BinaryDataset,
    config: ClassifierConfig,
    split: SplitSpec,
    k: int,
    select_on_full: bool = False,
    jobs: int = 1,
    splits: Optional[Sequence[tuple[np.ndarray, np.ndarray]]] = None,
) -> EvalReport:
    """Train/test over repeated random splits, selecting features on the
    training portion of each split (or once on all data with
    ``select_on_full``).

    ``splits`` overrides the generated train/test partitions.
    """
    y = dataset.labels
    _check_labels(y)
    if splits is None:
        splits = [make_split(y, split, rep) for rep in range(split.repetitions)]
    full = _selection(dataset, k) if select_on_full else None
    payloads = [(config, k, rep, split.seed, tr, te, full) for rep, (tr, te) in enumerate(splits)]
    results = _parallel_map(_run_repetition, dataset, payloads, jobs)
    records = tuple(r for r, _ in results)
    echo = {
        "classifier": config.kind,
        "classifier_config": asdict(config),
        "k_features": k,
        "select_on_full": select_on_full,
        "split": asdict(split),
        "dataset_fingerprint": dataset.fingerprint(),
    }
    return EvalReport(echo, records, average_roc([c for _, c in results]))


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CvResult:
    kind: str
    best: float
    mean_auc: tuple[tuple[float, float], ...]  # (value, mean validation auc), ascending values
    folds: int
    k: int

    def to_json(self) -> str:
        doc = {
            "classifier": self.kind,
            "best": self.best,
            "folds": self.folds,
            "k_features": self.k,
            "grid": [{"value": v, "mean_auc": a} for v, a in self.mean_auc],
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def stratified_folds(labels: np.ndarray, folds: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng([seed, 0xF01D])
    assignment = np.empty(len(labels), dtype=np.int64)
    for c in (0, 1):
        idx = rng.permutation(np.flatnonzero(labels == c))
        assignment[idx] = np.arange(len(idx)) % folds
    return [np.flatnonzero(assignment == f) for f in range(folds)]


def _run_fold(dataset, config, grid, k, seed, fold, train_idx, val_idx):
    train = dataset.subset(train_idx)
    val = dataset.subset(val_idx)
    selected = _selection(train, k)
    svm_seed = int(np.random.default_rng([seed, fold, 2]).integers(2**31))
    y = val.labels
    return [
        roc_and_auc(score_dataset(train_classifier(train, selected, config.with_hyperparameter(v), svm_seed), val), y).auc
        for v in grid
    ]


def cross_validate(
    dataset: BinaryDataset,
    config: ClassifierConfig,
    grid: Sequence[float],
    k: int,
    folds: int = 5,
    seed: int = 0,
    jobs: int = 1,
) -> CvResult:
    """Pick the grid value with the highest mean validation AUC.

    Ties go to the smaller value.  For logistic regression the unregularized
    value 0 is always part of the grid.
    """
    values = sorted(set(float(v) for v in grid) | ({0.0} if config.kind == "logreg" else set()))
    if not values:
        raise ValueError("grid must not be empty")
    y = dataset.labels
    _check_labels(y)
    if min(np.sum(y == 0), np.sum(y == 1)) < folds:
        raise TooFewSamples(f"each class needs at least {folds} samples for {folds}-fold cross-validation")
    fold_idx = stratified_folds(y, folds, seed)
    all_idx = np.arange(len(y))
    payloads = [
        (config, values, k, seed, f, np.setdiff1d(all_idx, fold_idx[f]), fold_idx[f]) for f in range(folds)
    ]
    per_fold = np.array(_parallel_map(_run_fold, dataset, payloads, jobs))
    means = per_fold.mean(axis=0)
    best_i = 0
    for i in range(1, len(values)):
        if means[i] > means[best_i]:
            best_i = i
    return CvResult(config.kind, values[best_i], tuple(zip(values, means.tolist())), folds, k)


# ---------------------------------------------------------------------------
# leave one family out
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FamilyResult:
    family: str
    n_samples: int
    detection_rate: float
    k: int
    selected: tuple[int, ...] = field(repr=False)


def leave_one_family_out(
    dataset: BinaryDataset, family: str, k: int = 100, lam: float = 2e-3, config: Optional[ClassifierConfig] = None
) -> FamilyResult:
    """Train without ``family`` and report the detection rate on it."""
    if config is None:
        config = ClassifierConfig(kind="logreg", lam=lam)
    elif config.kind == "logreg":
        config = config.with_hyperparameter(lam)
    held = [i for i, r in enumerate(dataset.rows) if r.label == 1 and r.family == family]
    if not held:
        raise UnknownFamily(f"no ransomware samples of family {family!r}")
    held_set = set(held)
    train_idx = [i for i in range(len(dataset)) if i not in held_set]
    train = dataset.subset(train_idx)
    test = dataset.subset(held)
    selected = _selection(train, k)
    model = train_classifier(train, selected, config)
    detected = predict_labels(model, test)
    return FamilyResult(family, len(held), float(np.mean(detected)), k, selected)


def _loo_task(dataset, family, k, lam, config):
    return leave_one_family_out(dataset, family, k, lam, config)


@dataclass(frozen=True)
class LooTable:
    ks: tuple[int, ...]
    results: tuple[FamilyResult, ...]

    def families(self) -> list[str]:
        return sorted({r.family for r in self.results})

    def rate(self, family: str, k: int) -> float:
        return next(r.detection_rate for r in self.results if r.family == family and r.k == k)

    def weighted_average(self, k: int) -> float:
        rows = [r for r in self.results if r.k == k]
        return sum(r.n_samples * r.detection_rate for r in rows) / sum(r.n_samples for r in rows)

    def csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["family", "n_samples", *(f"det_rate_k{k}" for k in self.ks)])
        total = 0
        for fam in self.families():
            n = next(r.n_samples for r in self.results if r.family == fam)
            total += n
            writer.writerow([fam, n, *(f"{self.rate(fam, k):.4f}" for k in self.ks)])
        writer.writerow(["Weighted Avg.", total, *(f"{self.weighted_average(k):.4f}" for k in self.ks)])
        return buf.getvalue()


def leave_one_family_out_table(
    dataset: BinaryDataset,
    ks: Sequence[int] = (400, 100),
    lam: float = 2e-3,
    config: Optional[ClassifierConfig] = None,
    jobs: int = 1,
) -> LooTable:
    families = sorted({r.family for r in dataset.rows if r.label == 1 and r.family is not None})
    payloads = [(fam, k, lam, config) for fam in families for k in ks]
    return LooTable(tuple(ks), tuple(_parallel_map(_loo_task, dataset, payloads, jobs)))


# ---------------------------------------------------------------------------
# majority voting over external verdicts
# ---------------------------------------------------------------------------

VERDICTS = ("malware", "clean")


def majority_vote(labels_per_sample: Mapping[str, Sequence[str]]) -> dict[str, int]:
    """1 iff strictly more than half of a sample's verdicts say malware.

    Samples without any verdict are left out.
    """
    out = {}
    for sample_id, verdicts in labels_per_sample.items():
        if not verdicts:
            continue
        malware = sum(v == "malware" for v in verdicts)
        out[sample_id] = int(2 * malware > len(verdicts))
    return out


def read_verdicts(text: str) -> dict[str, list[str]]:
    """Parse a ``sample_id,vendor,verdict`` CSV into per-sample verdict lists."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["sample_id", "vendor", "verdict"]:
        raise SchemaError("verdict CSV must have header sample_id,vendor,verdict")
    out: dict[str, list[str]] = {}
    for line, row in enumerate(reader, start=2):
        verdict = (row["verdict"] or "").strip().lower()
        if verdict not in VERDICTS:
            raise SchemaError(f"line {line}: verdict must be one of {VERDICTS}, got {row['verdict']!r}")
        out.setdefault(row["sample_id"].strip(), []).append(verdict)
    return out


def votes_csv(votes: Mapping[str, int]) -> str:
    lines = ["sample_id,label"] + [f"{sid},{votes[sid]}" for sid in sorted(votes)]
    return "\n".join(lines) + "\n"
