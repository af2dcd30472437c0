"""Exception types raised across the toolkit."""


class GeometryError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(GeometryError, ValueError):
    pass


class NonSmoothActivation(GeometryError, ValueError):
    """A curvature operation was requested on a network with relu layers."""


class DegenerateNormal(GeometryError, ArithmeticError):
    """The gradient of the pairwise score vanishes, so no normal is defined."""


class NoBoundaryFound(GeometryError, RuntimeError):
    pass


class LanczosNotConverged(GeometryError, RuntimeError):
    pass


class TrainingDiverged(GeometryError, RuntimeError):
    pass


class InvalidQuery(GeometryError, ValueError):
    pass


class InvalidInput(GeometryError, ValueError):
    pass


class DegenerateDenominator(GeometryError, ArithmeticError):
    pass


class ConfigError(GeometryError, ValueError):
    pass


class DatasetError(GeometryError, ValueError):
    pass
