"""Exception hierarchy shared by every module."""


class BasisFlowError(Exception):
    """Base class for all library errors."""


class DegenerateProjection(BasisFlowError):
    """A point maps (nearly) onto the line at infinity, or a matrix is singular."""


class DegenerateConfiguration(BasisFlowError):
    """Correspondences do not determine a unique homography."""


class DimensionMismatch(BasisFlowError, ValueError):
    pass


class RankDeficient(BasisFlowError):
    pass


class SingularBasis(BasisFlowError):
    pass


class UnderdeterminedSystem(BasisFlowError):
    pass


class NoTexture(BasisFlowError):
    pass


class EmptyMask(BasisFlowError):
    pass


class SpecInfeasible(BasisFlowError, ValueError):
    pass


# io
class FormatError(BasisFlowError, ValueError):
    pass


class BadMagic(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class DimensionOverflow(FormatError):
    pass


class UnsupportedFormat(FormatError):
    pass


class BadHeader(FormatError):
    pass
