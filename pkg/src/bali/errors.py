"""Exception types shared across the package."""


class BaliError(Exception):
    """Base class for all package-specific errors."""


class ParseError(BaliError):
    """A line record could not be parsed. Carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class IntegrityError(BaliError):
    """Loaded data violates a structural invariant (e.g. dangling edge)."""


class ValidationError(BaliError):
    """A record is well-formed but semantically invalid (e.g. overlapping spans)."""


class UnknownConceptError(BaliError, KeyError):
    """Lookup of a concept id that is not in the knowledge graph."""


class ConfigurationError(BaliError):
    """A configuration is infeasible or inconsistent with the data."""


class CheckpointError(BaliError):
    """A checkpoint file is corrupt, truncated, or of an unsupported version."""


class NumericalError(BaliError):
    """Training produced a non-finite loss. ``diagnostics_path`` points at a snapshot."""

    def __init__(self, message: str, diagnostics_path=None):
        super().__init__(message)
        self.diagnostics_path = diagnostics_path
