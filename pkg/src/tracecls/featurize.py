"""Vocabulary fitting and the samples x features presence matrix.

Each feature is a ``(class, token)`` pair rendered as ``"<class>:<token>"``,
e.g. ``reg:write:hkcu\\software\\...\\run`` or ``api:ntwritefile``.  Only
presence is recorded, never counts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import sparse

from .errors import DimensionMismatch, EmptyCorpus, FingerprintMismatch, MissingLabel, SchemaError
from .ingest import DIR_OPS, FILE_OPS, BehavioralReport

FEATURE_CLASSES: tuple[str, ...] = (
    "api",
    *(f"reg:{op}" for op in FILE_OPS),
    *(f"file:{op}" for op in FILE_OPS),
    *(f"ext:{op}" for op in FILE_OPS),
    *(f"dir:{op}" for op in DIR_OPS),
    "drop",
    "str",
)

# the seven report sections, used for class-breakdown summaries
CLASS_GROUPS = {
    "reg": "Registry Keys Operations",
    "api": "API Stats",
    "str": "Strings",
    "ext": "File Extensions",
    "file": "Files Operations",
    "dir": "Directory Operations",
    "drop": "Dropped Files Extensions",
}

_OP_PREFIXES = {"reg": "registry_ops", "file": "file_ops", "ext": "extension_ops", "dir": "directory_ops"}

VOCAB_FORMAT = "tracecls-vocabulary/1"
DATASET_FORMAT = "tracecls-dataset/1"


def feature_class_of(name: str) -> str:
    head, _, rest = name.partition(":")
    if head in _OP_PREFIXES:
        op = rest.partition(":")[0]
        cls = f"{head}:{op}"
    else:
        cls = head
    if cls not in FEATURE_CLASSES:
        raise SchemaError(f"feature {name!r} has no known class prefix")
    return cls


def class_group(feature_class: str) -> str:
    return feature_class.partition(":")[0]


def report_features(report: BehavioralReport) -> set[str]:
    """All namespaced feature names exhibited by one report."""
    names = {f"api:{t}" for t in report.api_calls}
    for prefix, section in _OP_PREFIXES.items():
        for op, tokens in getattr(report, section).items():
            names.update(f"{prefix}:{op}:{t}" for t in tokens)
    names.update(f"drop:{t}" for t in report.dropped_file_types)
    names.update(f"str:{t}" for t in report.strings)
    return names


@dataclass(frozen=True)
class FeatureVocabulary:
    names: tuple[str, ...]
    index: dict = field(init=False, repr=False, compare=False)
    fingerprint: str = field(init=False)

    def __post_init__(self):
        if list(self.names) != sorted(set(self.names)):
            raise SchemaError("vocabulary names must be unique and lexicographically ordered")
        object.__setattr__(self, "index", {name: i for i, name in enumerate(self.names)})
        digest = hashlib.sha256()
        for name in self.names:
            digest.update(f"{feature_class_of(name)}\t{name}\n".encode("utf-8"))
        object.__setattr__(self, "fingerprint", digest.hexdigest())

    def __len__(self) -> int:
        return len(self.names)

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(feature_class_of(n) for n in self.names)

    def to_dict(self) -> dict:
        return {
            "format": VOCAB_FORMAT,
            "fingerprint": self.fingerprint,
            "entries": [[name, cls] for name, cls in zip(self.names, self.classes)],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureVocabulary":
        if doc.get("format") != VOCAB_FORMAT:
            raise SchemaError(f"not a vocabulary file (format={doc.get('format')!r})")
        vocab = cls(tuple(entry[0] for entry in doc["entries"]))
        if vocab.fingerprint != doc.get("fingerprint"):
            raise FingerprintMismatch("vocabulary file fingerprint does not match its entries")
        return vocab


def fit_vocabulary(corpus: Iterable[BehavioralReport]) -> FeatureVocabulary:
    seen: set[str] = set()
    n = 0
    for report in corpus:
        seen |= report_features(report)
        n += 1
    if n == 0:
        raise EmptyCorpus("cannot fit a vocabulary on an empty corpus")
    return FeatureVocabulary(tuple(sorted(seen)))


@dataclass(frozen=True)
class DatasetRow:
    sample_id: str
    label: Optional[int]
    family: Optional[str]
    present: tuple[int, ...]


@dataclass(frozen=True)
class BinaryDataset:
    """Immutable presence matrix stored row-wise as sorted column-id tuples."""

    vocabulary_fingerprint: Optional[str]
    n_features: int
    rows: tuple[DatasetRow, ...]

    def __post_init__(self):
        for row in self.rows:
            if row.present and (row.present[-1] >= self.n_features or row.present[0] < 0):
                raise DimensionMismatch(f"row {row.sample_id!r} references a column outside 0..{self.n_features - 1}")
            if any(a >= b for a, b in zip(row.present, row.present[1:])):
                raise SchemaError(f"row {row.sample_id!r}: present ids must be strictly increasing")
            if row.label not in (None, 0, 1):
                raise SchemaError(f"row {row.sample_id!r}: label must be 0 or 1")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def labels(self) -> np.ndarray:
        if any(r.label is None for r in self.rows):
            raise MissingLabel("dataset contains unlabeled rows")
        return np.fromiter((r.label for r in self.rows), dtype=np.int64, count=len(self.rows))

    @property
    def sample_ids(self) -> list[str]:
        return [r.sample_id for r in self.rows]

    @property
    def families(self) -> list[Optional[str]]:
        return [r.family for r in self.rows]

    def csr(self) -> sparse.csr_matrix:
        indptr = np.zeros(len(self.rows) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r.present) for r in self.rows])
        indices = np.fromiter((c for r in self.rows for c in r.present), dtype=np.int64, count=int(indptr[-1]))
        data = np.ones(len(indices), dtype=np.float64)
        return sparse.csr_matrix((data, indices, indptr), shape=(len(self.rows), self.n_features))

    def dense(self, columns: Optional[Sequence[int]] = None) -> np.ndarray:
        """Dense float matrix, optionally restricted to ``columns`` (in that order)."""
        if columns is None:
            columns = range(self.n_features)
        position = {c: j for j, c in enumerate(columns)}
        out = np.zeros((len(self.rows), len(position)), dtype=np.float64)
        for i, row in enumerate(self.rows):
            for c in row.present:
                j = position.get(c)
                if j is not None:
                    out[i, j] = 1.0
        return out

    def subset(self, indices: Iterable[int]) -> "BinaryDataset":
        return BinaryDataset(self.vocabulary_fingerprint, self.n_features, tuple(self.rows[i] for i in indices))

    def with_labels(self, labels: Sequence[int]) -> "BinaryDataset":
        if len(labels) != len(self.rows):
            raise DimensionMismatch("label count does not match row count")
        rows = tuple(
            DatasetRow(r.sample_id, int(y), r.family, r.present) for r, y in zip(self.rows, labels)
        )
        return BinaryDataset(self.vocabulary_fingerprint, self.n_features, rows)

    @classmethod
    def from_matrix(cls, matrix, labels=None, families=None, fingerprint=None) -> "BinaryDataset":
        """Build a dataset from a dense 0/1 array (mostly for tests and tooling)."""
        matrix = np.asarray(matrix)
        n, d = matrix.shape
        rows = []
        for i in range(n):
            present = tuple(int(c) for c in np.flatnonzero(matrix[i]))
            label = None if labels is None else int(labels[i])
            family = None if families is None else families[i]
            rows.append(DatasetRow(f"row{i:05d}", label, family, present))
        return cls(fingerprint, d, tuple(rows))

    def fingerprint(self) -> str:
        return hashlib.sha256(dataset_jsonl(self).encode("utf-8")).hexdigest()


def check_fingerprint(expected: Optional[str], actual: Optional[str], what: str) -> None:
    if expected is not None and actual is not None and expected != actual:
        raise FingerprintMismatch(
            f"{what}: vocabulary fingerprint {actual[:12]} does not match expected {expected[:12]}"
        )


def transform(
    corpus: Iterable[BehavioralReport], vocab: FeatureVocabulary, require_labels: bool = True
) -> BinaryDataset:
    rows = []
    for report in corpus:
        if report.label is None and require_labels:
            raise MissingLabel(f"report {report.sample_id!r} has no label")
        label = None if report.label is None else int(report.label == "ransomware")
        present = tuple(sorted(vocab.index[n] for n in report_features(report) if n in vocab.index))
        rows.append(DatasetRow(report.sample_id, label, report.family, present))
    return BinaryDataset(vocab.fingerprint, len(vocab), tuple(rows))


def dataset_jsonl(dataset: BinaryDataset, corpus_fingerprint: Optional[str] = None) -> str:
    header = {
        "format": DATASET_FORMAT,
        "vocabulary_fingerprint": dataset.vocabulary_fingerprint,
        "n_features": dataset.n_features,
    }
    if corpus_fingerprint is not None:
        header["corpus_fingerprint"] = corpus_fingerprint
    lines = [json.dumps(header, sort_keys=True)]
    for row in dataset.rows:
        lines.append(
            json.dumps(
                {"sample_id": row.sample_id, "label": row.label, "family": row.family, "present": list(row.present)},
                sort_keys=True,
            )
        )
    return "\n".join(lines) + "\n"


def write_dataset(dataset: BinaryDataset, path, corpus_fingerprint: Optional[str] = None) -> None:
    Path(path).write_text(dataset_jsonl(dataset, corpus_fingerprint), encoding="utf-8", newline="\n")


def read_dataset(path) -> BinaryDataset:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SchemaError(f"{path}: empty dataset file")
    header = json.loads(lines[0])
    if header.get("format") != DATASET_FORMAT:
        raise SchemaError(f"{path}: not a dataset file")
    rows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        doc = json.loads(line)
        rows.append(DatasetRow(doc["sample_id"], doc["label"], doc.get("family"), tuple(doc["present"])))
    return BinaryDataset(header["vocabulary_fingerprint"], int(header["n_features"]), tuple(rows))


def write_vocabulary(vocab: FeatureVocabulary, path) -> None:
    Path(path).write_text(json.dumps(vocab.to_dict(), indent=1) + "\n", encoding="utf-8", newline="\n")


def read_vocabulary(path) -> FeatureVocabulary:
    return FeatureVocabulary.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
