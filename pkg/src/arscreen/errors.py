"""Exception types shared across the package.

The CLI maps these onto process exit codes: invalid input or an
out-of-domain parameter exits 3, a numerical failure exits 4.
"""

from __future__ import annotations


class ArscreenError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ArscreenError):
    """Malformed or inconsistent input data (files, panels, configs)."""


class DomainError(ArscreenError):
    """Parameter outside its admissible domain."""


class NumericalError(ArscreenError):
    """Numerical failure: non-finite value, failed factorization, degenerate weights."""


class ModeSearchError(NumericalError):
    """Posterior mode search failed to converge.

    Carries the last iterate so callers can report where the search stalled.
    """

    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate
