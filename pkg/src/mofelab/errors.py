"""Exception hierarchy.

Every error carries the CLI exit code it maps to, so the harness can turn
any failure into the right process status without a lookup table.
"""


class MofeError(Exception):
    exit_code = 1


class ConfigError(MofeError, ValueError):
    exit_code = 1


class InvalidArchitectureError(ConfigError):
    pass


class ShapeError(MofeError, ValueError):
    exit_code = 1


class MaskError(MofeError, ValueError):
    exit_code = 1


class InvalidPairError(MaskError):
    pass


class DataError(MofeError):
    exit_code = 2


class EmptyInputError(DataError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TruncationError(DataError):
    pass


class IncompleteScoresError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NumericError(MofeError, ArithmeticError):
    exit_code = 3
