"""Exception hierarchy; the CLI maps these onto exit codes."""


class BlangevinError(Exception):
    """Base class for all package errors."""


class ConfigError(BlangevinError, ValueError):
    """Invalid configuration or parameters (CLI exit code 2)."""


class NumericalError(BlangevinError, RuntimeError):
    """Numerical failure at compute time (CLI exit code 3)."""


class QuadratureError(NumericalError):
    """An integral could not be evaluated reliably."""


class UnphysicalModelError(NumericalError):
    """The requested quantity diverges for this spectral model."""


class CrossCheckError(NumericalError):
    """Two independent evaluation routes disagree beyond tolerance."""


class IntegratorError(NumericalError):
    """Time integration violated its preconditions or produced garbage."""
