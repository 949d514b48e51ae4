"""Exception hierarchy shared across the package."""


class TokenControlError(Exception):
    """Base class for all errors raised by tokencontrol."""


class GuardViolation(TokenControlError, ValueError):
    """Effective purchase price ``p + dp`` fell below the price guard."""

    def __init__(self, message, timestep=None):
        super().__init__(message if timestep is None else f"t={timestep}: {message}")
        self.timestep = timestep


class NonPositiveSupply(TokenControlError, ValueError):
    """Circulating supply would become zero or negative."""

    def __init__(self, message, timestep=None):
        super().__init__(message if timestep is None else f"t={timestep}: {message}")
        self.timestep = timestep


class LengthMismatch(TokenControlError, ValueError):
    pass


class DomainError(TokenControlError, ValueError):
    pass


class SingularControlHessian(TokenControlError, ArithmeticError):
    pass


class LineSearchFailed(TokenControlError):
    pass


class PenaltyDiverged(TokenControlError):
    pass


class QPInfeasible(TokenControlError):
    def __init__(self, message, iteration=None):
        super().__init__(message if iteration is None else f"iteration {iteration}: {message}")
        self.iteration = iteration


class QPUnbounded(TokenControlError):
    pass


class TrustRegionCollapsed(TokenControlError):
    pass


class BranchSearchExhausted(TokenControlError):
    pass


class BadSpec(TokenControlError, ValueError):
    pass


class TooShort(TokenControlError, ValueError):
    pass


class RankDeficient(TokenControlError, ArithmeticError):
    pass


class ParseError(TokenControlError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SchemaMismatch(TokenControlError, ValueError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing columns: " + ", ".join(self.missing))


class TooFewPairs(TokenControlError, ValueError):
    pass


class NonPositivePrice(TokenControlError, ValueError):
    pass


class ConfigError(TokenControlError, ValueError):
    """Scenario or experiment file failed validation."""
