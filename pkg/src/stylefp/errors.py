"""Exception hierarchy shared by every stylefp module."""

from __future__ import annotations


class StyleFPError(Exception):
    """Base class for all errors raised by stylefp."""


class SpecError(StyleFPError, ValueError):
    """A configuration or shape contract was violated (dimension mismatch, unknown layer)."""


class ManifestParseError(StyleFPError, ValueError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None, column: int | None = None):
        self.path = path
        self.line = line
        self.column = column
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}:{column}"
            where += ": "
        super().__init__(f"{where}{message}")


class ProviderError(StyleFPError, RuntimeError):
    """An augmentation provider failed. Carries the provider name and, for batched calls, the index."""

    def __init__(self, provider: str, message: str, index: int | None = None):
        self.provider = provider
        self.index = index
        at = f" at index {index}" if index is not None else ""
        super().__init__(f"provider {provider!r} failed{at}: {message}")


class WeightsLoadError(StyleFPError, OSError):
    pass


class NumericError(StyleFPError, FloatingPointError):
    pass


class NonFiniteLossError(NumericError):
    def __init__(self, epoch: int, batch: int, term: str, value: float):
        self.epoch = epoch
        self.batch = batch
        self.term = term
        self.value = value
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {term} term = {value}")


class CollapseError(StyleFPError, RuntimeError):
    """Training converged to the degenerate all-points-to-center solution."""

    def __init__(self, epoch: int, mean_pos: float, mean_neg: float, message: str):
        self.epoch = epoch
        self.mean_pos = mean_pos
        self.mean_neg = mean_neg
        super().__init__(message)


class UncalibratedError(StyleFPError, RuntimeError):
    def __init__(self, message: str = "verifier has no radius; run `stylefp calibrate` first"):
        super().__init__(message)


class CheckpointError(StyleFPError, ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CalibrationError(StyleFPError, ValueError):
    pass
