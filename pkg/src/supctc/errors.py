"""Shared exception hierarchy.

Every package-specific failure derives from SupctcError so the CLI can map
error categories onto stable exit codes.
"""


class SupctcError(Exception):
    """Base class for all package errors."""


class DataError(SupctcError):
    """Corpus/file-level problems (I/O, malformed records, bad splits)."""


class TrainingError(SupctcError):
    """Failures raised while computing losses or running the training loop."""


class ModelMismatchError(SupctcError):
    """Checkpoint or tensor shapes incompatible with the data they are applied to."""


class AnalysisError(SupctcError):
    """Embedding/dispersion analysis failures."""
