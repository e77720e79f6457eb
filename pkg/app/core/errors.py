"""
Exceptions raised by the services.

Everything derives from ValueError so callers that only care about
"bad input or impossible request" can keep catching ValueError.
"""


class RNFError(ValueError):
    """Base class for all domain errors."""


class MalformedIndexError(RNFError):
    pass


class ResourceBudgetError(RNFError):
    pass


class NonRealStateError(RNFError):
    pass


class GradientUnavailableError(RNFError):
    pass


class NormBudgetError(RNFError):
    pass


class BlowUpError(RNFError):
    pass


class DenominatorFloorError(RNFError):
    """A small denominator fell below its non-resonance floor."""

    def __init__(self, message: str, index=None, value: float | None = None, floor: float | None = None):
        super().__init__(message)
        self.index = index
        self.value = value
        self.floor = floor


class ClosureViolationError(RNFError):
    pass


class NoWitnessError(RNFError):
    pass


class CertificateError(RNFError):
    pass


class NotSolvableError(RNFError):
    pass


class InternalContradictionError(RNFError):
    pass


class ConfigError(RNFError):
    pass
