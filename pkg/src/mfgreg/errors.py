"""Exception hierarchy shared by all mfgreg modules."""


class MfgregError(Exception):
    """Base class for all mfgreg errors."""


class ConfigurationError(MfgregError):
    """Invalid parameters, options, or model configuration."""


class DomainError(MfgregError):
    """Evaluation point outside the domain of a basis system."""


class DataError(MfgregError):
    """Malformed or inconsistent input data (file schemas, shapes, NaN/Inf)."""


class NumericalError(MfgregError):
    """Rank deficiency, non-positive-definite Gram, or other numeric failure."""
