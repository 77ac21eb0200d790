"""Exception hierarchy shared across the package.

Validation-style problems (bad input files, bad configs, shape mismatches)
derive from ``ValueError`` so the CLI can map them to exit code 2.
"""


class PatientKGError(Exception):
    """Base class for all package errors."""


class ValidationError(PatientKGError, ValueError):
    """Input data violates a documented invariant."""


class ParseError(ValidationError):
    """A line in an input file could not be parsed."""

    def __init__(self, message, *, path=None, line=None):
        self.path = path
        self.line = line
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class ShapeError(ValidationError):
    """Operands have incompatible shapes."""


class VocabularyError(ValidationError):
    """A token id falls outside the embedding table."""


class ConfigError(ValidationError):
    """A configuration value is missing or out of range."""


class CheckpointError(ValidationError):
    """A checkpoint is malformed or incompatible with the data it is used on."""


class UndefinedDistributionError(ValidationError):
    """A probability distribution was requested over an empty sample."""


class NonFiniteError(PatientKGError, FloatingPointError):
    """A loss or gradient became NaN or infinite."""


class DivergenceError(NonFiniteError):
    """Training produced a non-finite loss."""

    def __init__(self, message, *, epoch=None, doc_id=None):
        self.epoch = epoch
        self.doc_id = doc_id
        super().__init__(message)
