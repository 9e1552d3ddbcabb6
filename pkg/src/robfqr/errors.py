"""Exception types raised across the package."""


class RobFQRError(Exception):
    """Base class for all package errors."""


class GridMismatchError(RobFQRError, ValueError):
    """Objects that must share a grid were built on different grids."""


class UnsupportedGridError(RobFQRError, ValueError):
    """The operation needs a uniform grid."""


class DegenerateSampleError(RobFQRError, ValueError):
    """The sample carries no usable spread (e.g. every curve equals the center)."""


class SingularDesignError(RobFQRError, ValueError):
    """The regression design is rank deficient."""


class ConvergenceError(RobFQRError, RuntimeError):
    """An iterative solver hit its iteration cap.

    Attributes
    ----------
    last : object
        The last iterate.
    residual : float
        Size of the stopping criterion at the last iterate.
    """

    def __init__(self, message, last=None, residual=float("nan")):
        super().__init__(message)
        self.last = last
        self.residual = residual


class ParseError(RobFQRError, ValueError):
    """Malformed input file; the message names the offending row/column."""
