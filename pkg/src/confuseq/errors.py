"""Exception hierarchy shared by all pipeline stages.

The CLI maps these onto exit codes: usage errors exit 1, DataError exits 2,
NumericalError exits 3.
"""


class ConfuseqError(Exception):
    """Base class for all errors raised by this package."""


class DataError(ConfuseqError):
    """Malformed input files or violated data invariants."""


class ParseError(DataError):
    """File could not be parsed; message names the offending line when known."""


class NumericalError(ConfuseqError):
    """Numerical failure: non-convergence, NaN loss, rank collapse."""
