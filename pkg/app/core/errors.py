"""
Exception hierarchy shared by the library and the CLI.

Every error carries the process exit code the CLI returns for it.
"""

from __future__ import annotations


class ToolkitError(Exception):
    """Base class for all toolkit failures."""

    exit_code: int = 1


class DimensionError(ToolkitError, ValueError):
    """Shapes disagree, or the input is not finite."""

    exit_code = 2


class ConfigError(ToolkitError, ValueError):
    """Invalid parameter or configuration value."""

    exit_code = 2


class SingularSystemError(ToolkitError):
    """Restricted least-squares columns are numerically rank deficient."""

    exit_code = 3

    def __init__(self, n_cols: int, message: str | None = None) -> None:
        self.n_cols = n_cols
        super().__init__(message or f"rank-deficient column set ({n_cols} columns)")


class ConvergenceError(ToolkitError):
    """Iteration budget exhausted before the optimality certificate held."""

    exit_code = 3

    def __init__(self, gap: float, message: str | None = None) -> None:
        self.gap = gap
        super().__init__(message or f"solver did not converge (duality gap {gap:.3e})")


class RankShortfallError(ToolkitError):
    """A cluster asks for more directions than the deflated covariance holds."""

    exit_code = 3


class TrackerInvariantError(ToolkitError):
    """Tracker state is internally inconsistent; processing must stop."""

    exit_code = 3


class ParseError(ToolkitError):
    """Malformed input file."""

    exit_code = 4

    def __init__(self, path: str, line: int, message: str) -> None:
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class ClusterOverflowError(ToolkitError):
    """More eigenvalue clusters were estimated than the tracker allows."""

    exit_code = 3

    def __init__(self, found: int, allowed: int) -> None:
        self.found = found
        self.allowed = allowed
        super().__init__(f"{found} clusters estimated, at most {allowed} allowed")
