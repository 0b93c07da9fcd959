"""Exception hierarchy shared across the package."""


class SeqDropError(Exception):
    """Base class for all package errors."""


class InvalidDimensionsError(SeqDropError, ValueError):
    pass


class SizeMismatchError(SeqDropError, ValueError):
    pass


class UnsupportedDtypeError(SeqDropError, ValueError):
    pass


class InvalidSpecError(SeqDropError, ValueError):
    pass


class ConfigError(SeqDropError, ValueError):
    pass


class NonFiniteError(SeqDropError, FloatingPointError):
    pass
