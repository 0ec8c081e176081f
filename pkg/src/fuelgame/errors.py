"""Exception hierarchy shared by all fuelgame modules."""


class FuelGameError(Exception):
    pass


class DimensionError(FuelGameError, ValueError):
    pass


class SpecError(FuelGameError, ValueError):
    """Invalid game parameters (adjacency, discount, cost)."""


class NumericError(FuelGameError, ArithmeticError):
    """Quadrature, ODE or root finding failed to meet its tolerance."""


class ModelError(FuelGameError):
    """Standing assumptions on the cost appear to be violated."""


class CoverageError(FuelGameError, ValueError):
    """A resource level beyond the tabulated boundary was requested."""


class DomainError(FuelGameError, ValueError):
    pass


class HypothesisError(FuelGameError, ValueError):
    pass


class GeometryError(FuelGameError):
    pass


class SchemeError(FuelGameError):
    """The reflection scheme could not restore feasibility."""


class AdmissibilityError(FuelGameError, ValueError):
    pass


class ConfigError(FuelGameError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
