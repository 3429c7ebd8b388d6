"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` so the command line front end can map
failures onto its documented process exit statuses.
"""

from __future__ import annotations


class JntselError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class InputError(JntselError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class GridError(InputError):
    """Runs do not share an identical frequency grid, or a grid is malformed."""


class CalibrationError(InputError):
    """A run has no calibration record, or a calibration has no run."""


class DomainError(InputError, ValueError):
    """A value lies outside its mathematical domain (e.g. nonpositive PSD)."""


class ConfigError(JntselError, ValueError):
    """Invalid configuration parameter."""

    exit_code = 4


class FitError(JntselError):
    """Least-squares fit could not be carried out."""


class SingularFitError(FitError):
    """Design matrix is rank deficient."""


class UnderdeterminedError(FitError):
    """Fewer data points than model parameters."""


class InconsistencyError(JntselError):
    """Inputs that must cover the same objects do not."""


class ScanError(JntselError):
    """Bandwidth scan produced no usable bandwidth."""


class LeverageError(FitError):
    """A hat-matrix diagonal is at or above one."""
