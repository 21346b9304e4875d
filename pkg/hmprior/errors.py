"""
Exception types raised by the history matching package.
"""


class HistoryMatchError(Exception):
    """Base class for all errors raised by hmprior."""


class StructuralError(HistoryMatchError, ValueError):
    """Inputs do not line up, e.g. p-values that do not match the constraint set."""


class SimulationError(HistoryMatchError):
    """A model simulation kept failing after the retry budget was spent."""

    def __init__(self, message, lam=None):
        super().__init__(message)
        self.lam = lam


class DegenerateWaveError(HistoryMatchError):
    """Every evaluation in a wave was degenerate, so no ranking is possible."""


class UnsupportedError(HistoryMatchError):
    """The requested operation is not available for these inputs."""


class ConfigError(HistoryMatchError, ValueError):
    """
    Invalid run configuration.

    Carries the dotted field path and, for YAML syntax errors, the line number.
    """

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field:
            location.append(f"field '{field}'")
        prefix = f"[{', '.join(location)}] " if location else ""
        super().__init__(prefix + message)
