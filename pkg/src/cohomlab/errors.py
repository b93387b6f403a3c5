"""Exception hierarchy shared by all modules."""


class CohomlabError(Exception):
    """Base class for all package errors."""


class InvalidParameter(CohomlabError, ValueError):
    pass


class HorizonExceeded(CohomlabError, IndexError):
    pass


class DomainMismatch(CohomlabError, ValueError):
    pass


class BackendMismatch(CohomlabError, TypeError):
    pass


class NonConvergence(CohomlabError):
    pass


class DegenerateDensity(CohomlabError):
    pass


class FitFailed(CohomlabError):
    pass


class TailNotConverged(CohomlabError):
    pass


class NoSpectralGap(CohomlabError):
    pass


class NonEquivariantMeasure(CohomlabError):
    pass


class NotPrimitive(CohomlabError):
    pass


class NotBracketable(CohomlabError, ValueError):
    pass


class SchemaError(CohomlabError, ValueError):
    pass


class NotACoboundary(CohomlabError):
    """Raised when the coboundary verdict fails.

    The best martingale-coboundary representative is still attached as
    ``result`` so callers can inspect it.
    """

    def __init__(self, message, result=None, diagnostic=None):
        super().__init__(message)
        self.result = result
        self.diagnostic = diagnostic


class TruncationWarning(UserWarning):
    """Fourier truncation error exceeded the configured budget."""
