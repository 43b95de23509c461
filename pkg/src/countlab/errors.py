"""Exception types shared across the package."""


class CountlabError(Exception):
    """Base class for all countlab errors."""


class NegativeDepth(CountlabError):
    """A closing bracket occurred at depth 0. Carries the 0-based token index."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"closing bracket at depth 0 (token index {index})")


class GenerationStalled(CountlabError):
    """The sampler could not produce an acceptable word within the rejection budget."""


class IndivisibleLength(CountlabError):
    """Zigzag total length is not a multiple of the block period 2*j."""


class ParseError(CountlabError):
    """A dataset file line is malformed. Carries the 1-based line number."""

    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class NonFinite(CountlabError):
    """A forward or backward pass produced a non-finite value at some timestep."""

    def __init__(self, timestep: int, what: str = "value"):
        self.timestep = timestep
        super().__init__(f"non-finite {what} at timestep {timestep}")


class LengthMismatch(CountlabError):
    """Paired sequences have different lengths."""


class NonPositiveLoss(CountlabError):
    """Loss must be strictly positive to take its negative log."""


class DegenerateX(CountlabError):
    """Regression abscissae are all equal; the slope is undefined."""


class InsufficientData(CountlabError):
    """Fewer usable points than the operation requires."""


class ConfigError(CountlabError):
    """An experiment configuration violates a module invariant."""


class DataError(CountlabError):
    """An expected dataset file or checkpoint is missing or unreadable."""
