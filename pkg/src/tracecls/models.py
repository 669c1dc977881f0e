"""Linear classifiers over binary presence vectors.

* L2-regularized logistic regression trained by full-batch gradient descent
  (the primary detector), with an online single-sample update.
* Bernoulli naive Bayes with Laplace smoothing.
* Linear soft-margin SVM trained by epoch-based primal subgradient descent.

Every model is restricted to a sorted tuple of selected column ids; columns
outside the selection never influence a prediction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import DimensionMismatch, NonFiniteCost, SchemaError, SingleClassData
from .featurize import BinaryDataset, check_fingerprint

PROB_EPS = 1e-12
DEFAULT_LEARNING_RATE = 0.8
DEFAULT_MAX_ITERS = 4000
DEFAULT_TOL = 1e-8
MODEL_FORMAT = "tracecls-model/1"


def sigmoid(t):
    """Logistic function, evaluated without overflow for any finite input."""
    if np.ndim(t) == 0:
        t = float(t)
        if t >= 0:
            return 1.0 / (1.0 + math.exp(-t))
        e = math.exp(t)
        return e / (1.0 + e)
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class TrainingMeta:
    learning_rate: float
    max_iters: int
    final_cost: float
    iters_run: int
    converged: bool


@dataclass(frozen=True)
class LogRegModel:
    selected: tuple[int, ...]
    weights: np.ndarray
    bias: float
    lam: float
    training_meta: TrainingMeta
    vocabulary_fingerprint: Optional[str] = None
    selected_names: Optional[tuple[str, ...]] = None

    kind = "logreg"

    def __post_init__(self):
        if len(self.weights) != len(self.selected):
            raise DimensionMismatch("weights and selected columns differ in length")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


@dataclass(frozen=True)
class NbModel:
    selected: tuple[int, ...]
    log_prior: np.ndarray  # [goodware, ransomware]
    log_p1: np.ndarray  # shape (2, D'): log p(x_j = 1 | class)
    log_p0: np.ndarray  # shape (2, D'): log p(x_j = 0 | class)
    alpha: float = 1.0
    vocabulary_fingerprint: Optional[str] = None
    selected_names: Optional[tuple[str, ...]] = None

    kind = "nb"


@dataclass(frozen=True)
class SvmMeta:
    epochs: int
    seed: int
    final_objective: float
    steps: int


@dataclass(frozen=True)
class SvmModel:
    selected: tuple[int, ...]
    weights: np.ndarray
    bias: float
    C: float
    training_meta: SvmMeta
    vocabulary_fingerprint: Optional[str] = None
    selected_names: Optional[tuple[str, ...]] = None

    kind = "svm"

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be positive")


Model = Union[LogRegModel, NbModel, SvmModel]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _restrict(data: BinaryDataset, selected: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    return data.dense(selected), data.labels.astype(np.float64)


def _check_two_classes(y: np.ndarray) -> None:
    if len(y) < 2 or y.min() == y.max():
        raise SingleClassData("training data must contain both classes")


def _row_vector(selected: Sequence[int], present: Iterable[int]) -> np.ndarray:
    position = {c: j for j, c in enumerate(selected)}
    x = np.zeros(len(selected))
    for c in present:
        j = position.get(c)
        if j is not None:
            x[j] = 1.0
    return x


def _check_data(model: Model, data: BinaryDataset) -> None:
    check_fingerprint(model.vocabulary_fingerprint, data.vocabulary_fingerprint, "dataset")
    if model.selected and model.selected[-1] >= data.n_features:
        raise DimensionMismatch("model references columns beyond the dataset width")


# ---------------------------------------------------------------------------
# logistic regression
# ---------------------------------------------------------------------------


def _cost(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, lam: float) -> float:
    p = np.clip(sigmoid(X @ w + b), PROB_EPS, 1.0 - PROB_EPS)
    data_term = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(data_term + 0.5 * lam * np.dot(w, w))


def _gradient(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    r = sigmoid(X @ w + b) - y
    return X.T @ r / len(y) + lam * w, float(np.mean(r))


def logreg_predict(model: LogRegModel, row: Iterable[int]) -> float:
    present = set(row)
    z = model.bias + sum(w for c, w in zip(model.selected, model.weights) if c in present)
    return sigmoid(float(z))


def logreg_cost(model: LogRegModel, data: BinaryDataset) -> float:
    _check_data(model, data)
    X, y = _restrict(data, model.selected)
    return _cost(model.weights, model.bias, X, y, model.lam)


def logreg_gradient(model: LogRegModel, data: BinaryDataset) -> tuple[np.ndarray, float]:
    """Analytic gradient of the regularized cost w.r.t. (weights, bias)."""
    _check_data(model, data)
    X, y = _restrict(data, model.selected)
    return _gradient(model.weights, model.bias, X, y, model.lam)


def logreg_train(
    data: BinaryDataset,
    selected: Sequence[int],
    lam: float,
    learning_rate: float = DEFAULT_LEARNING_RATE,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    init: Optional[tuple[np.ndarray, float]] = None,
    names: Optional[Sequence[str]] = None,
) -> LogRegModel:
    """Full-batch gradient descent on the L2-regularized cross-entropy.

    Starts from zero parameters unless ``init`` is given, and stops after
    ``max_iters`` updates or once the cost changes by less than ``tol``.
    The bias is not penalized.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    selected = tuple(int(c) for c in selected)
    X, y = _restrict(data, selected)
    _check_two_classes(y)
    if init is None:
        w, b = np.zeros(len(selected)), 0.0
    else:
        w, b = np.array(init[0], dtype=np.float64), float(init[1])
        if w.shape != (len(selected),):
            raise DimensionMismatch("initial weights do not match the selection")

    cost = _cost(w, b, X, y, lam)
    converged = False
    iters = 0
    while iters < max_iters:
        gw, gb = _gradient(w, b, X, y, lam)
        w = w - learning_rate * gw
        b = b - learning_rate * gb
        iters += 1
        new_cost = _cost(w, b, X, y, lam)
        if not math.isfinite(new_cost):
            raise NonFiniteCost(f"cost became non-finite after {iters} iterations; lower the learning rate")
        delta = abs(cost - new_cost)
        cost = new_cost
        if delta < tol:
            converged = True
            break

    meta = TrainingMeta(learning_rate, max_iters, cost, iters, converged)
    return LogRegModel(
        selected, w, b, float(lam), meta, data.vocabulary_fingerprint, None if names is None else tuple(names)
    )


def logreg_update_online(
    model: LogRegModel, row: Iterable[int], label: int, learning_rate: Optional[float] = None
) -> LogRegModel:
    """One stochastic gradient step on a single labeled sample."""
    eta = model.training_meta.learning_rate if learning_rate is None else learning_rate
    x = _row_vector(model.selected, row)
    r = sigmoid(float(model.bias + x @ model.weights)) - float(label)
    w = model.weights - eta * (r * x + model.lam * model.weights)
    b = model.bias - eta * r
    meta = replace(model.training_meta, iters_run=model.training_meta.iters_run + 1)
    return replace(model, weights=w, bias=float(b), training_meta=meta)


# ---------------------------------------------------------------------------
# Bernoulli naive Bayes
# ---------------------------------------------------------------------------


def nb_train(
    data: BinaryDataset, selected: Sequence[int], alpha: float = 1.0, names: Optional[Sequence[str]] = None
) -> NbModel:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    selected = tuple(int(c) for c in selected)
    X, y = _restrict(data, selected)
    _check_two_classes(y)
    log_p1 = np.empty((2, len(selected)))
    log_p0 = np.empty((2, len(selected)))
    log_prior = np.empty(2)
    for c in (0, 1):
        Xc = X[y == c]
        p = (Xc.sum(axis=0) + alpha) / (len(Xc) + 2.0 * alpha)
        log_p1[c] = np.log(p)
        log_p0[c] = np.log1p(-p)
        log_prior[c] = math.log(len(Xc) / len(y))
    return NbModel(
        selected, log_prior, log_p1, log_p0, float(alpha), data.vocabulary_fingerprint,
        None if names is None else tuple(names),
    )


def _nb_posterior(model: NbModel, X: np.ndarray) -> np.ndarray:
    joint = model.log_prior[None, :] + X @ model.log_p1.T + (1.0 - X) @ model.log_p0.T
    return np.exp(joint[:, 1] - np.logaddexp(joint[:, 0], joint[:, 1]))


def nb_predict(model: NbModel, row: Iterable[int]) -> float:
    """Posterior probability of the ransomware class."""
    x = _row_vector(model.selected, row)
    return float(_nb_posterior(model, x[None, :])[0])


# ---------------------------------------------------------------------------
# linear SVM
# ---------------------------------------------------------------------------


def _svm_objective(w: np.ndarray, b: float, X: np.ndarray, s: np.ndarray, C: float) -> float:
    hinge = np.maximum(0.0, 1.0 - s * (X @ w + b))
    return float(0.5 * np.dot(w, w) + C * np.mean(hinge))


def hinge_loss(model: SvmModel, data: BinaryDataset) -> float:
    """Mean hinge loss of ``model`` on ``data``."""
    X, y = _restrict(data, model.selected)
    s = 2.0 * y - 1.0
    return float(np.mean(np.maximum(0.0, 1.0 - s * (X @ model.weights + model.bias))))


def svm_train(
    data: BinaryDataset,
    selected: Sequence[int],
    C: float,
    epochs: int = 50,
    seed: int = 0,
    names: Optional[Sequence[str]] = None,
) -> SvmModel:
    """Pegasos-style primal subgradient descent for a linear SVM.

    Minimizes ``0.5 * |w|^2 + C * mean_i hinge(1 - y_i (w.x_i + b))`` with
    per-sample steps of size ``1 / (t * max(1/C, 1e-6) + 1)``.  Each epoch
    visits every sample once in an order drawn from ``seed``; the bias is not
    regularized.
    """
    if C <= 0:
        raise ValueError("C must be positive")
    selected = tuple(int(c) for c in selected)
    X, y = _restrict(data, selected)
    _check_two_classes(y)
    s = 2.0 * y - 1.0
    reg = max(1.0 / C, 1e-6)
    rng = np.random.default_rng(seed)
    w = np.zeros(len(selected))
    b = 0.0
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(len(y)):
            t += 1
            eta = 1.0 / (t * reg + 1.0)
            violated = s[i] * (X[i] @ w + b) < 1.0
            w *= 1.0 - eta / C
            if violated:
                w += eta * s[i] * X[i]
                b += eta * s[i]
    meta = SvmMeta(epochs, seed, _svm_objective(w, b, X, s, C), t)
    return SvmModel(
        selected, w, float(b), float(C), meta, data.vocabulary_fingerprint, None if names is None else tuple(names)
    )


def svm_score(model: SvmModel, row: Iterable[int]) -> float:
    present = set(row)
    return float(model.bias + sum(w for c, w in zip(model.selected, model.weights) if c in present))


# ---------------------------------------------------------------------------
# batch scoring and persistence
# ---------------------------------------------------------------------------


def score_dataset(model: Model, data: BinaryDataset) -> np.ndarray:
    """Real-valued scores for every row: posteriors for logreg/NB, margins for SVM."""
    _check_data(model, data)
    X = data.dense(model.selected)
    if isinstance(model, LogRegModel):
        return sigmoid(X @ model.weights + model.bias)
    if isinstance(model, NbModel):
        return _nb_posterior(model, X)
    return X @ model.weights + model.bias


def decision_threshold(model: Model) -> float:
    return 0.0 if isinstance(model, SvmModel) else 0.5


def predict_labels(model: Model, data: BinaryDataset) -> np.ndarray:
    scores = score_dataset(model, data)
    if isinstance(model, SvmModel):
        return (scores > 0.0).astype(np.int64)
    return (scores >= 0.5).astype(np.int64)


def model_to_dict(model: Model) -> dict:
    doc = {
        "format": MODEL_FORMAT,
        "kind": model.kind,
        "vocabulary_fingerprint": model.vocabulary_fingerprint,
        "selected": list(model.selected),
        "selected_names": None if model.selected_names is None else list(model.selected_names),
    }
    if isinstance(model, LogRegModel):
        doc["hyperparameters"] = {"lambda": model.lam}
        doc["parameters"] = {"weights": model.weights.tolist(), "bias": model.bias}
        doc["training_meta"] = vars(model.training_meta).copy()
    elif isinstance(model, NbModel):
        doc["hyperparameters"] = {"alpha": model.alpha}
        doc["parameters"] = {
            "log_prior": model.log_prior.tolist(),
            "log_p1": model.log_p1.tolist(),
            "log_p0": model.log_p0.tolist(),
        }
        doc["training_meta"] = {}
    else:
        doc["hyperparameters"] = {"C": model.C}
        doc["parameters"] = {"weights": model.weights.tolist(), "bias": model.bias}
        doc["training_meta"] = vars(model.training_meta).copy()
    return doc


def model_from_dict(doc: dict) -> Model:
    if doc.get("format") != MODEL_FORMAT:
        raise SchemaError(f"not a model file (format={doc.get('format')!r})")
    selected = tuple(doc["selected"])
    names = None if doc.get("selected_names") is None else tuple(doc["selected_names"])
    fp = doc.get("vocabulary_fingerprint")
    params = doc["parameters"]
    kind = doc["kind"]
    if kind == "logreg":
        return LogRegModel(
            selected, np.array(params["weights"], dtype=np.float64), float(params["bias"]),
            float(doc["hyperparameters"]["lambda"]), TrainingMeta(**doc["training_meta"]), fp, names,
        )
    if kind == "nb":
        return NbModel(
            selected, np.array(params["log_prior"]), np.array(params["log_p1"]).reshape(2, len(selected)),
            np.array(params["log_p0"]).reshape(2, len(selected)), float(doc["hyperparameters"]["alpha"]), fp, names,
        )
    if kind == "svm":
        return SvmModel(
            selected, np.array(params["weights"], dtype=np.float64), float(params["bias"]),
            float(doc["hyperparameters"]["C"]), SvmMeta(**doc["training_meta"]), fp, names,
        )
    raise SchemaError(f"unknown classifier kind {kind!r}")


def save_model(model: Model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1, sort_keys=True) + "\n", encoding="utf-8", newline="\n")


def load_model(path) -> Model:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
