"""Exception types shared across the toolkit.

Grouped by how the CLI maps them to exit codes: data errors (bad, missing
or mismatched inputs) exit with code 3, numeric aborts (NaN, divergence,
singular feedback) with code 4.
"""


class DataError(Exception):
    """Invalid or inconsistent input data."""


class UnsupportedFormatError(DataError):
    """Audio file in a format the toolkit does not accept."""


class DegenerateSignalError(DataError):
    """A silent / zero-energy signal where a nonzero one is required."""


class NoPeriodicityError(DataError):
    """Control signal has no detectable fundamental frequency."""


class NumericError(Exception):
    """Numerical failure during optimisation or rendering."""


class NumericAbortError(NumericError):
    """Non-finite value encountered; the run cannot continue."""


class InstabilityError(NumericError):
    """Rendered output grew far beyond the input level."""


class FeedbackSingularError(NumericError):
    """Feedback denominator too close to zero to evaluate."""


class SingularFilterError(NumericError):
    """Filter denominator vanished at some frequency bin."""
