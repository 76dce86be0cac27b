"""Exception hierarchy shared across the toolkit.

Two error families matter for the CLI exit codes: problems with input
files map to exit code 2, violated contracts (bad arguments, broken
invariants) map to exit code 3.
"""


class RadmatchError(Exception):
    """Base class for all toolkit errors."""


class InputError(RadmatchError):
    """A required input is missing or unreadable."""


class FormatError(InputError):
    """An input file exists but its content is malformed."""


class ContractError(RadmatchError):
    """An argument or invariant contract was violated."""
