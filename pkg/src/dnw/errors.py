"""Exception hierarchy shared across the package."""


class DNWError(Exception):
    """Base class for all package errors."""


class InvalidRangeError(DNWError, ValueError):
    pass


class NumericError(DNWError, FloatingPointError):
    """A non-finite value appeared where finite values are required."""


class BudgetError(DNWError, ValueError):
    """Edge budget exceeds the number of candidate pairs."""


class ContractError(DNWError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(DNWError, ValueError):
    """Invalid experiment configuration. The message starts with the key path."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ParseError(DNWError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ScenarioRejected(DNWError):
    """A verification scenario failed its preconditions (not a test failure)."""
