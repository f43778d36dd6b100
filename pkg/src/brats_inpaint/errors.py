"""Exception hierarchy shared by all modules."""


class BratsInpaintError(Exception):
    """Base class for every error raised by this package."""


class BadMagic(BratsInpaintError):
    pass


class UnsupportedDatatype(BratsInpaintError):
    pass


class UnsupportedDimensions(BratsInpaintError):
    pass


class TruncatedData(BratsInpaintError):
    pass


class NonFiniteData(BratsInpaintError):
    pass


class MissingFile(BratsInpaintError):
    pass


class DimsMismatch(BratsInpaintError):
    pass


class EmptyMask(BratsInpaintError):
    pass


class EmptyPool(BratsInpaintError):
    pass


class NoFeasibleVoxels(BratsInpaintError):
    pass


class MissingHealthyMask(BratsInpaintError):
    pass


class MaxAttemptsExceeded(BratsInpaintError):
    """Raised when the sampler gives up; ``stats`` counts rejections by reason."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = dict(stats or {})


class ZeroDynamicRange(BratsInpaintError):
    pass


class NoCommonCases(BratsInpaintError):
    pass


class NoBoundary(BratsInpaintError):
    pass


class NotConverged(BratsInpaintError):
    """Solver stopped above tolerance; the partial volume rides along."""

    def __init__(self, message, result=None, iterations=0, max_residual=float("nan")):
        super().__init__(message)
        self.result = result
        self.iterations = iterations
        self.max_residual = max_residual


class EmptyTable(BratsInpaintError):
    pass
