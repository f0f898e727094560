"""Exception hierarchy shared by the library and the CLI."""


class CopulaEMError(Exception):
    """Base class for all errors raised by copula_em."""


class DomainError(CopulaEMError, ValueError):
    """An argument lies outside the domain of a function (e.g. a probability of 0 or 1)."""


class NumericalError(CopulaEMError, ArithmeticError):
    """A matrix is singular or not positive definite, or a computation went non-finite."""


class ConfigurationError(CopulaEMError, ValueError):
    """Inconsistent settings, such as fewer observed values than mixture components."""


class IngestionError(CopulaEMError, ValueError):
    """An input file could not be parsed."""
