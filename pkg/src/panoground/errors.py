"""Exception types shared across the package.

``ContractError`` subclasses signal that a caller violated a documented
precondition; the CLI maps them to exit code 1.  File/format problems map
to exit code 2.
"""


class ContractError(ValueError):
    """An input violates a documented precondition."""


class ShapeError(ContractError):
    """Array dimensions disagree with the operation's contract."""


class ParameterError(ContractError):
    """A scalar parameter is out of its valid range."""


class DomainError(ContractError):
    """Array values are outside the operation's domain."""


class VocabularyError(ContractError):
    """A class name is not in the configured vocabulary."""


class ConfigError(ContractError):
    """Configuration fields are inconsistent."""


class PFTFormatError(OSError):
    """A portable-float-tensor file is malformed (bad magic or size)."""
