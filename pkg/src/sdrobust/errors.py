"""Exception types raised across the package."""


class SdRobustError(Exception):
    """Base class for all package errors."""


class DimensionError(SdRobustError, ValueError):
    """Operands are bound to different generators or have mismatched lengths."""


class DomainError(SdRobustError, ValueError):
    """An argument lies outside the domain of the operation (e.g. t < 0)."""


class ResolventDomainError(DomainError):
    """The resolvent parameter does not exceed the spectral bound."""


class DivergenceError(SdRobustError, RuntimeError):
    """A fixed-point iteration failed to converge."""

    def __init__(self, message, last_residual, iterations):
        super().__init__(message)
        self.last_residual = last_residual
        self.iterations = iterations


class LambdaSearchError(SdRobustError, RuntimeError):
    """No resolvent parameter with contraction factor below one was found."""

    def __init__(self, message, last_lambda, last_alpha):
        super().__init__(message)
        self.last_lambda = last_lambda
        self.last_alpha = last_alpha


class InstabilityError(SdRobustError, RuntimeError):
    """A simulated trajectory exceeded the overflow threshold."""

    def __init__(self, message, period, trajectory=None):
        super().__init__(message)
        self.period = period
        self.trajectory = trajectory


class PreconditionError(SdRobustError, ValueError):
    """The nominal loop does not satisfy the stability hypothesis."""

    def __init__(self, message, nominal_radius):
        super().__init__(message)
        self.nominal_radius = nominal_radius


class AnalysisError(SdRobustError, RuntimeError):
    """A numerical linear-algebra step failed."""


class AdmissibilityConditionError(SdRobustError, ValueError):
    """The exponent pair (q, gamma) violates q >= (gamma + 1) / gamma."""


class OracleDivergenceError(SdRobustError, RuntimeError):
    """The finite-difference oracle blew up while the spectral model did not."""


class ConfigError(SdRobustError, ValueError):
    """A scenario file is malformed; ``problems`` lists every offending key."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration: " + "; ".join(self.problems))
