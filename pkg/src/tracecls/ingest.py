"""Parsing of ``trace/1`` behavioral report files.

A report is a minimal JSON projection of a sandbox run onto seven feature
sections (API calls, registry/file/extension/directory operations, dropped
file types, strings).  Parsing normalizes every token so that trivially
different spellings of the same path collapse onto one feature.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .errors import CorpusIOError, DuplicateSampleId, EmptyTrace, EncodingError, SchemaError

SCHEMA_VERSION = "trace/1"
REPORT_SUFFIX = ".trace.json"

LABELS = ("goodware", "ransomware")
FILE_OPS = ("read", "open", "write", "delete")
DIR_OPS = ("enumerate", "create")

_OP_SECTIONS = {
    "registry_ops": FILE_OPS,
    "file_ops": FILE_OPS,
    "extension_ops": FILE_OPS,
    "directory_ops": DIR_OPS,
}
_SET_SECTIONS = ("api_calls", "dropped_file_types", "strings")
_KNOWN_FIELDS = {"schema", "sample_id", "label", "family", *_SET_SECTIONS, *_OP_SECTIONS}


def _empty_ops(ops: Iterable[str]) -> dict[str, frozenset[str]]:
    return {op: frozenset() for op in ops}


@dataclass(frozen=True)
class BehavioralReport:
    sample_id: str
    label: Optional[str] = None
    family: Optional[str] = None
    api_calls: frozenset[str] = frozenset()
    registry_ops: Mapping[str, frozenset[str]] = field(default_factory=lambda: _empty_ops(FILE_OPS))
    file_ops: Mapping[str, frozenset[str]] = field(default_factory=lambda: _empty_ops(FILE_OPS))
    extension_ops: Mapping[str, frozenset[str]] = field(default_factory=lambda: _empty_ops(FILE_OPS))
    directory_ops: Mapping[str, frozenset[str]] = field(default_factory=lambda: _empty_ops(DIR_OPS))
    dropped_file_types: frozenset[str] = frozenset()
    strings: frozenset[str] = frozenset()

    @property
    def effective(self) -> bool:
        """True when the trace recorded at least one API call."""
        return bool(self.api_calls)

    def to_dict(self) -> dict:
        doc: dict = {"schema": SCHEMA_VERSION, "sample_id": self.sample_id}
        if self.label is not None:
            doc["label"] = self.label
        if self.family is not None:
            doc["family"] = self.family
        doc["api_calls"] = sorted(self.api_calls)
        for section, ops in _OP_SECTIONS.items():
            mapping = getattr(self, section)
            doc[section] = {op: sorted(mapping.get(op, ())) for op in ops}
        doc["dropped_file_types"] = sorted(self.dropped_file_types)
        doc["strings"] = sorted(self.strings)
        return doc


@dataclass(frozen=True)
class CorpusSummary:
    loaded: int
    discarded: int
    discarded_ids: tuple[str, ...] = ()


def normalize_token(token: str) -> str:
    return token.strip().lower()


def normalize_path(path: str) -> str:
    """Lower-case, use ``\\`` as the only separator, drop trailing separators."""
    text = path.strip().lower().replace("/", "\\")
    return text.rstrip("\\")


def normalize_extension(ext: str) -> str:
    return ext.strip().lower().lstrip(".")


def _token_set(values, where: str, normalize) -> frozenset[str]:
    if not isinstance(values, list):
        raise SchemaError(f"{where}: expected a list, got {type(values).__name__}")
    out = set()
    for value in values:
        if not isinstance(value, str):
            raise SchemaError(f"{where}: non-string entry {value!r}")
        norm = normalize(value)
        if not norm:
            raise SchemaError(f"{where}: entry {value!r} is empty after normalization")
        out.add(norm)
    return frozenset(out)


def _op_map(doc, section: str, normalize) -> dict[str, frozenset[str]]:
    allowed = _OP_SECTIONS[section]
    raw = doc.get(section, {})
    if not isinstance(raw, dict):
        raise SchemaError(f"{section}: expected an object")
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise SchemaError(f"{section}: unknown op key(s) {unknown}; allowed {list(allowed)}")
    return {op: _token_set(raw.get(op, []), f"{section}.{op}", normalize) for op in allowed}


def report_from_dict(doc, schema_version: str = SCHEMA_VERSION) -> BehavioralReport:
    if not isinstance(doc, dict):
        raise SchemaError("report must be a JSON object")
    unknown = sorted(set(doc) - _KNOWN_FIELDS)
    if unknown:
        raise SchemaError(f"unknown field(s) {unknown}")
    for required in ("schema", "sample_id", "api_calls"):
        if required not in doc:
            raise SchemaError(f"missing required field {required!r}")
    if doc["schema"] != schema_version:
        raise SchemaError(f"schema {doc['schema']!r} does not match expected {schema_version!r}")

    sample_id = doc["sample_id"]
    if not isinstance(sample_id, str) or not sample_id.strip():
        raise SchemaError("sample_id must be a non-empty string")
    label = doc.get("label")
    if label is not None and label not in LABELS:
        raise SchemaError(f"label must be one of {LABELS}, got {label!r}")
    family = doc.get("family")
    if family is not None and (not isinstance(family, str) or not family.strip()):
        raise SchemaError("family must be a non-empty string when given")

    report = BehavioralReport(
        sample_id=sample_id.strip(),
        label=label,
        family=family.strip() if family is not None else None,
        api_calls=_token_set(doc["api_calls"], "api_calls", normalize_token),
        registry_ops=_op_map(doc, "registry_ops", normalize_path),
        file_ops=_op_map(doc, "file_ops", normalize_path),
        extension_ops=_op_map(doc, "extension_ops", normalize_extension),
        directory_ops=_op_map(doc, "directory_ops", normalize_path),
        dropped_file_types=_token_set(doc.get("dropped_file_types", []), "dropped_file_types", normalize_token),
        strings=_token_set(doc.get("strings", []), "strings", normalize_token),
    )
    if not report.effective:
        raise EmptyTrace(f"report {report.sample_id!r} has no API calls", report=report)
    return report


def parse_report(raw: bytes, schema_version: str = SCHEMA_VERSION) -> BehavioralReport:
    """Parse one UTF-8 encoded report document.

    Raises :class:`EmptyTrace` (with the parsed report attached) when the
    trace holds no API calls; whether to keep such a sample is the caller's
    decision.
    """
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EncodingError(f"report is not valid UTF-8: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None
    return report_from_dict(doc, schema_version)


def serialize_report(report: BehavioralReport) -> bytes:
    """Canonical byte form: sorted keys and sorted token lists."""
    return (json.dumps(report.to_dict(), sort_keys=True, indent=1, ensure_ascii=False) + "\n").encode("utf-8")


def write_report(report: BehavioralReport, directory: Path) -> Path:
    path = Path(directory) / f"{report.sample_id}{REPORT_SUFFIX}"
    path.write_bytes(serialize_report(report))
    return path


def _parse_lenient(path: Path, schema_version: str) -> tuple[BehavioralReport, bool]:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CorpusIOError(f"cannot read {path}: {exc}") from None
    try:
        return parse_report(raw, schema_version), True
    except EmptyTrace as exc:
        return exc.report, False
    except (SchemaError, EncodingError) as exc:
        raise type(exc)(f"{path.name}: {exc}") from None


def load_corpus(
    directory, discard_empty: bool = True, schema_version: str = SCHEMA_VERSION
) -> tuple[list[BehavioralReport], CorpusSummary]:
    """Load every ``*.trace.json`` file under ``directory``, sorted by sample id.

    With ``discard_empty`` false, reports without API calls are kept.
    """
    root = Path(directory)
    if not root.is_dir():
        raise CorpusIOError(f"corpus directory {root} does not exist")
    reports: dict[str, BehavioralReport] = {}
    discarded: list[str] = []
    for path in sorted(root.glob(f"*{REPORT_SUFFIX}")):
        report, effective = _parse_lenient(path, schema_version)
        if report.sample_id in reports or report.sample_id in discarded:
            raise DuplicateSampleId(f"sample_id {report.sample_id!r} appears in more than one file ({path.name})")
        if not effective and discard_empty:
            discarded.append(report.sample_id)
            continue
        reports[report.sample_id] = report
    ordered = [reports[key] for key in sorted(reports)]
    summary = CorpusSummary(loaded=len(ordered), discarded=len(discarded), discarded_ids=tuple(sorted(discarded)))
    return ordered, summary


def corpus_fingerprint(reports: Iterable[BehavioralReport]) -> str:
    digest = hashlib.sha256()
    for report in sorted(reports, key=lambda r: r.sample_id):
        digest.update(serialize_report(report))
    return digest.hexdigest()
