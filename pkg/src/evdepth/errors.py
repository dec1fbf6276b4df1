"""Exception hierarchy shared by all evdepth modules."""


class EvdepthError(Exception):
    """Base class for every error raised by this package."""


class FormatError(EvdepthError):
    """Input bytes do not conform to a file format."""


class MalformedHeader(FormatError):
    pass


class BadRecord(FormatError):
    def __init__(self, index: int, reason: str):
        super().__init__(f"record {index}: {reason}")
        self.index = index
        self.reason = reason


class NonMonotonicTimestamp(FormatError):
    def __init__(self, index: int):
        super().__init__(f"record {index}: timestamp decreases")
        self.index = index


class EmptyStream(EvdepthError):
    pass


class ZeroDurationWindow(EvdepthError):
    pass


class NonDivisibleShape(EvdepthError):
    pass


class InvalidParams(EvdepthError, ValueError):
    pass


class NonPositiveSigma(InvalidParams):
    pass


class NonPositiveDepth(InvalidParams):
    pass


class OutOfRange(EvdepthError, ValueError):
    pass


class MomentOverflow(EvdepthError, OverflowError):
    pass


class NoValidPixels(EvdepthError):
    def __init__(self, subset: str = "all"):
        super().__init__(f"no valid pixels in subset {subset!r}")
        self.subset = subset


class ZeroTotalError(EvdepthError):
    pass


class Divergence(EvdepthError):
    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class IndexOutOfRange(EvdepthError, IndexError):
    pass


class NonMonotonicFrames(EvdepthError):
    pass


class OutOfSpan(EvdepthError):
    pass


class ShapeMismatch(EvdepthError, ValueError):
    pass


class ConfigError(EvdepthError, ValueError):
    pass
