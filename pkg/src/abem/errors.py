"""Exception hierarchy shared across the package."""


class AbemError(Exception):
    """Base class for all errors raised by :mod:`abem`."""


class GeometryError(AbemError):
    pass


class DegenerateCurve(GeometryError):
    pass


class SmoothComponentTooCoarse(GeometryError):
    pass


class NotAUniformRefinement(AbemError):
    pass


class NumericalError(AbemError):
    """Failure of a numerical kernel (factorization, quadrature)."""


class NotSPD(NumericalError):
    pass


class QuadratureNonConvergence(NumericalError):
    pass


class IncompatibleRhs(AbemError):
    pass


class AllIndicatorsZero(AbemError):
    pass


class ReferenceUnavailable(AbemError):
    pass


class NonMonotoneInput(AbemError):
    pass


class TooFewRows(AbemError):
    pass
