"""Exception hierarchy shared by all poisonforge modules.

Exit-code mapping used by the CLI: validation errors exit 1, I/O errors
exit 2, degenerate-statistics errors exit 3.
"""


class PoisonforgeError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ValidationError(PoisonforgeError):
    """Malformed input: bad file contents, out-of-range values, bad config."""

    exit_code = 1


class DegenerateStatisticsError(PoisonforgeError):
    """Training-dynamics statistics carry no signal (all-zero event counts)."""

    exit_code = 3
