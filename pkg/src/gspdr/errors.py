"""Exception hierarchy.

Every error carries a short ``category`` string; the CLI prints it as a
machine-parseable prefix (``config-error: ...``).
"""


class GspdrError(Exception):
    category = "error"


class ConfigError(GspdrError, ValueError):
    category = "config-error"


class ParseError(ConfigError):
    category = "parse-error"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(ConfigError):
    category = "validation-error"


class UsageError(GspdrError, RuntimeError):
    category = "usage-error"


class ShapeError(GspdrError, ValueError):
    category = "shape-error"


class NumericError(GspdrError, ArithmeticError):
    category = "numeric-error"


class ContractError(GspdrError, RuntimeError):
    category = "contract-error"


class CheckpointError(GspdrError, IOError):
    category = "checkpoint-error"
