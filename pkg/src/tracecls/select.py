"""Mutual-information ranking of binary features against the class label."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyDataset, KOutOfRange, UnlabeledRow
from .featurize import CLASS_GROUPS, BinaryDataset, FeatureVocabulary, class_group, feature_class_of


@dataclass(frozen=True)
class MiRanking:
    scores: np.ndarray  # mi in nats, indexed by column id
    order: np.ndarray  # column ids, mi descending, ties by ascending id

    def __len__(self) -> int:
        return len(self.order)


def _labels(dataset: BinaryDataset) -> np.ndarray:
    if len(dataset) == 0:
        raise EmptyDataset("mutual information needs at least one row")
    if any(r.label is None for r in dataset.rows):
        raise UnlabeledRow("mutual information needs labeled rows")
    return dataset.labels


def mi_from_counts(n11, n1_, n_1, n) -> np.ndarray:
    """Plug-in MI (nats) from contingency counts.

    ``n11`` rows with x=1,y=1; ``n1_`` rows with x=1; ``n_1`` rows with y=1;
    ``n`` total rows.  Empty cells contribute zero.
    """
    n11 = np.asarray(n11, dtype=np.float64)
    n1_ = np.asarray(n1_, dtype=np.float64)
    n_1 = float(n_1)
    n = float(n)
    cells = (
        (n11, n1_, n_1),
        (n1_ - n11, n1_, n - n_1),
        (n_1 - n11, n - n1_, n_1),
        (n - n1_ - n_1 + n11, n - n1_, n - n_1),
    )
    total = np.zeros_like(n11)
    for joint, px, py in cells:
        pxy = joint / n
        with np.errstate(divide="ignore", invalid="ignore"):
            term = pxy * np.log(pxy / ((px / n) * (py / n)))
        total += np.where(joint > 0, term, 0.0)
    # rounding can leave values a hair below zero for independent columns
    return np.maximum(total, 0.0)


def _column_counts(dataset: BinaryDataset, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = dataset.n_features
    n1_ = np.zeros(d, dtype=np.int64)
    n11 = np.zeros(d, dtype=np.int64)
    for row, label in zip(dataset.rows, y):
        if row.present:
            idx = np.asarray(row.present, dtype=np.int64)
            n1_[idx] += 1
            if label == 1:
                n11[idx] += 1
    return n11, n1_


def mutual_information(dataset: BinaryDataset, column: int) -> float:
    y = _labels(dataset)
    x = np.fromiter((column in set(r.present) for r in dataset.rows), dtype=bool, count=len(dataset))
    n11 = int(np.sum(x & (y == 1)))
    return float(mi_from_counts(n11, int(x.sum()), int(y.sum()), len(y)))


def rank_features(dataset: BinaryDataset) -> MiRanking:
    y = _labels(dataset)
    n11, n1_ = _column_counts(dataset, y)
    scores = mi_from_counts(n11, n1_, int(y.sum()), len(y))
    # lexsort: last key is primary
    order = np.lexsort((np.arange(len(scores)), -scores))
    return MiRanking(scores=scores, order=order)


def select_top(ranking: MiRanking, k: int) -> tuple[int, ...]:
    if not 1 <= k <= len(ranking):
        raise KOutOfRange(f"k={k} outside 1..{len(ranking)}")
    return tuple(sorted(int(c) for c in ranking.order[:k]))


def class_breakdown(ranking: MiRanking, vocab: FeatureVocabulary, k: int) -> dict[str, float]:
    """Percentage of the top-k features falling in each report section."""
    top = select_top(ranking, k)
    counts = dict.fromkeys(CLASS_GROUPS, 0)
    for c in top:
        counts[class_group(feature_class_of(vocab.names[c]))] += 1
    return {CLASS_GROUPS[g]: 100.0 * counts[g] / len(top) for g in CLASS_GROUPS}


def ranking_csv(ranking: MiRanking, vocab: FeatureVocabulary) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["column_id", "feature_name", "mi_nats"])
    for c in ranking.order:
        writer.writerow([int(c), vocab.names[c], repr(float(ranking.scores[c]))])
    return buf.getvalue()


def breakdown_csv(ranking: MiRanking, vocab: FeatureVocabulary, ks: Sequence[int]) -> str:
    tables = {k: class_breakdown(ranking, vocab, k) for k in ks}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["feature_class", *(f"top_{k}_pct" for k in ks)])
    for group in CLASS_GROUPS.values():
        writer.writerow([group, *(f"{tables[k][group]:.2f}" for k in ks)])
    return buf.getvalue()
