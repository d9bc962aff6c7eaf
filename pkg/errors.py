"""
Exception hierarchy shared by the library, the CLI and the HTTP service.
"""

from typing import Optional, Tuple


class MtbeError(Exception):
    """Base class for every error raised on purpose by this package."""

    exit_code = 1


class ConfigError(MtbeError, ValueError):
    exit_code = 2


class MalformedInputError(MtbeError, ValueError):
    exit_code = 3

    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class CalibrationError(MtbeError):
    exit_code = 4

    def __init__(self, message: str, ats_range: Tuple[float, float] = (float("nan"), float("nan"))):
        self.ats_range = ats_range
        super().__init__(f"{message} (ATS range seen: {ats_range[0]:.4g} .. {ats_range[1]:.4g})")


class EstimateInvalidError(MtbeError):
    exit_code = 5

    def __init__(self, message: str, estimate=None):
        self.estimate = estimate
        super().__init__(message)


class ConvergenceError(MtbeError):
    exit_code = 6
