"""Exception hierarchy shared across the package."""


class OtptLabError(Exception):
    """Base class for all package errors."""


class ZeroNorm(OtptLabError, ValueError):
    pass


class DimensionMismatch(OtptLabError, ValueError):
    pass


class RankDeficient(OtptLabError, ValueError):
    pass


class NonFiniteGradient(OtptLabError, FloatingPointError):
    pass


class EmptyInput(OtptLabError, ValueError):
    pass


class EmptyDataset(EmptyInput):
    pass


class InvalidSpec(OtptLabError, ValueError):
    pass


class SeparationInfeasible(OtptLabError, RuntimeError):
    pass


class SchemaMismatch(OtptLabError, ValueError):
    pass


class MissingMethod(OtptLabError, KeyError):
    pass


class IoError(OtptLabError, OSError):
    pass
