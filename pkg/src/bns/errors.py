"""Exception hierarchy shared by every layer of the package."""

from __future__ import annotations


class BNSError(Exception):
    """Base class for all errors raised by the package."""


class InputError(BNSError):
    """Problems with user-supplied input files."""


class MalformedRecord(InputError):
    def __init__(self, line: int, reason: str) -> None:
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class EmptyInput(InputError):
    pass


class NonMonotonicTimestamps(InputError):
    def __init__(self, line: int, previous: int, current: int) -> None:
        super().__init__(
            f"line {line}: timestamp {current} does not follow {previous}"
        )
        self.line = line


class ConfigError(BNSError):
    """Configuration or data-coverage problems detected before analysis."""


class CoverageError(ConfigError):
    def __init__(self, key: str, start: float, end: float, lo: float, hi: float) -> None:
        super().__init__(
            f"window [{start}, {end}) for {key} exceeds ingested range [{lo}, {hi}]"
        )
        self.key = key
        self.window = (start, end)
        self.coverage = (lo, hi)


class InvalidConfig(ConfigError, ValueError):
    pass


class InvalidParams(ConfigError, ValueError):
    pass


class InsufficientWindows(ConfigError):
    pass


class DegenerateBackground(ConfigError):
    """The background distance set has zero spread, so no score exists."""


class DimensionMismatch(BNSError, ValueError):
    pass


class LayoutError(BNSError):
    """An enumerated feature layout disagrees with its declared size."""
