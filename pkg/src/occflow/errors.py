"""Exception hierarchy for occflow."""


class OccflowError(Exception):
    """Base class for all occflow errors."""


class DimMismatch(OccflowError, ValueError):
    pass


class ImageTooSmall(OccflowError, ValueError):
    pass


class TooManyLevels(OccflowError, ValueError):
    pass


class BadDims(OccflowError, ValueError):
    pass


class AllPixelsInvalid(OccflowError, ValueError):
    pass


class NonFiniteLoss(OccflowError, FloatingPointError):
    """Raised when the objective becomes NaN/inf during a solve.

    ``state`` carries the solver state at the time of failure.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class NonFiniteGradient(OccflowError, FloatingPointError):
    pass


# -- file formats -----------------------------------------------------------

class FormatError(OccflowError, ValueError):
    pass


class BadMagic(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class DimOverflow(FormatError):
    pass


class NotSixteenBit(FormatError):
    pass


class BadChannelCount(FormatError):
    pass


class UnsupportedFormat(FormatError):
    pass


# -- evaluation -------------------------------------------------------------

class RegionEmpty(OccflowError, ValueError):
    pass


class NocNotSubset(OccflowError, ValueError):
    pass
