"""Exception hierarchy shared by the library and the CLI."""


class PhidivError(Exception):
    """Base class for all errors raised by phidiv."""

    exit_code = 3


class InputError(PhidivError, ValueError):
    """Malformed or inconsistent input data (bad dimensions, bad CSV rows)."""

    exit_code = 2


class DomainError(PhidivError, ValueError):
    """Argument outside the mathematical domain of a function."""

    exit_code = 2


class UnsupportedLambdaError(DomainError):
    """Cressie-Read index at or below -1 where it cannot be used."""


class SeparationError(PhidivError):
    """A response category is never observed, so no interior minimiser exists."""

    exit_code = 2

    def __init__(self, message, categories=()):
        super().__init__(message)
        self.categories = tuple(categories)


class SingularityError(PhidivError, ArithmeticError):
    """A matrix that must be inverted is singular or badly conditioned."""

    exit_code = 3

    def __init__(self, message, null_directions=None):
        super().__init__(message)
        self.null_directions = null_directions


class ConfigError(PhidivError, ValueError):
    """Invalid simulation configuration."""

    exit_code = 1
