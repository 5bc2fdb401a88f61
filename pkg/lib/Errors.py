class WellRoundError(Exception):
    """Base class for every error the library raises on purpose."""
    exit_code = 1


class ValidationError(WellRoundError, ValueError):
    exit_code = 2


class NumericError(WellRoundError, RuntimeError):
    exit_code = 3


class ScaleError(WellRoundError, ValueError):
    exit_code = 4


# linalg-core
class DimensionMismatch(ValidationError):
    pass


class SingularMatrix(NumericError):
    pass


class OutOfConvergenceRegion(NumericError):
    pass


# group-models
class UnknownGroup(ValidationError):
    pass


class NoWindow(ValidationError):
    pass


# lattice-reduction
class RankTooLarge(ScaleError):
    pass


class SingularBlock(NumericError):
    pass


# wr-certifier
class EpsilonTooLarge(ValidationError):
    pass


class WindowTooSmall(ValidationError):
    pass


class DegenerateMinus(NumericError):
    pass


class NonpositiveInput(ValidationError):
    pass


class EmptyIntersection(ValidationError):
    pass


# constant-calculus
class NonpositiveF(ValidationError):
    pass


class EmptyList(ValidationError):
    pass


class GroupMismatch(ValidationError):
    pass


class ChartOverflow(NumericError):
    pass


class ParameterOutOfRange(ValidationError):
    pass


class NotStarShaped(NumericError):
    pass


# counting
class ScaleTooLarge(ScaleError):
    pass
