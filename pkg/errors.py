"""
Exception types raised across the toolkit

Each error mixes in the built-in it refines, so `except ValueError` and
friends keep working, and carries the exit code the CLI reports for it.
"""


class BearError(Exception):
    """Base class for all toolkit errors"""

    exit_code = 1


class ParameterError(BearError, ValueError):
    """A hyperparameter or argument is outside its valid range"""

    exit_code = 2


class DimensionError(BearError, ValueError):
    """Matrix shapes do not conform"""

    exit_code = 2


class DegenerateInputError(BearError, ValueError):
    """Input makes the metric undefined (e.g. zero denominator)"""

    exit_code = 2


class MatrixSizeError(BearError, ValueError):
    """Matrix exceeds the small-scale SVD cap"""

    exit_code = 2


class CapacityError(BearError, ValueError):
    """Payload exceeds the memory cap; stream it with a BatchSource instead"""

    exit_code = 2


class FormatError(BearError, ValueError):
    """A BMAT file is malformed"""

    exit_code = 3


class NumericalError(BearError, ArithmeticError):
    """Divergence or non-convergence of a numerical routine"""

    exit_code = 4


class StorageError(BearError, OSError):
    """Reading or writing a file failed"""

    exit_code = 5


class DomainError(BearError, ValueError):
    """Input violates the domain of the method (e.g. negative entries for NMF)"""

    exit_code = 6
