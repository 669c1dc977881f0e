"""Exception hierarchy shared by every pipeline stage.

All data and validation problems derive from :class:`TraceclsError` so the
CLI can map them onto a single exit code.
"""

from __future__ import annotations


class TraceclsError(Exception):
    """Base class for data/validation failures."""


# ingest
class SchemaError(TraceclsError):
    pass


class EncodingError(TraceclsError):
    pass


class EmptyTrace(TraceclsError):
    """Raised when a report has no API calls.

    The parsed report is attached so the caller can still decide to keep it.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class DuplicateSampleId(TraceclsError):
    pass


class CorpusIOError(TraceclsError):
    pass


# featurize
class EmptyCorpus(TraceclsError):
    pass


class MissingLabel(TraceclsError):
    pass


class FingerprintMismatch(TraceclsError):
    pass


# select
class EmptyDataset(TraceclsError):
    pass


class UnlabeledRow(TraceclsError):
    pass


class KOutOfRange(TraceclsError):
    pass


# models
class DimensionMismatch(TraceclsError):
    pass


class SingleClassData(TraceclsError):
    pass


class NonFiniteCost(TraceclsError):
    pass


# evaluation
class SingleClassLabels(TraceclsError):
    pass


class TooFewSamples(TraceclsError):
    pass


class UnknownFamily(TraceclsError):
    pass


# synth
class InvalidConfig(TraceclsError):
    pass
