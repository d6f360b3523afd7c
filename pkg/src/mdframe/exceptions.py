"""Exception hierarchy shared by all mdframe modules."""

__all__ = (
    "MDFrameError",
    "NonCoprimeError",
    "ScaleOutOfRangeError",
    "DegenerateSetupError",
    "IndexOutOfRangeError",
    "TooLargeError",
    "SingularMatrixError",
    "GridMisalignedError",
    "UnitarityViolatedError",
    "DensityViolatedError",
    "NotAFrameError",
    "TailNotConvergedError",
    "TruncationNotConvergedError",
)

from typing import Any


class MDFrameError(Exception):
    """Base class for every error raised by mdframe."""


class NonCoprimeError(MDFrameError, ValueError):
    def __init__(self, p: int, q: int) -> None:
        super().__init__(f"p={p} and q={q} are not coprime")
        self.p = p
        self.q = q


class ScaleOutOfRangeError(MDFrameError, ValueError):
    pass


class DegenerateSetupError(MDFrameError, ValueError):
    pass


class IndexOutOfRangeError(MDFrameError, IndexError):
    pass


class TooLargeError(MDFrameError, ValueError):
    pass


class SingularMatrixError(MDFrameError, ArithmeticError):
    pass


class GridMisalignedError(MDFrameError, ValueError):
    pass


class UnitarityViolatedError(MDFrameError, ValueError):
    def __init__(self, message: str, cell: int) -> None:
        super().__init__(message)
        self.cell = cell


class DensityViolatedError(MDFrameError, ValueError):
    pass


class NotAFrameError(MDFrameError, ValueError):
    pass


class TailNotConvergedError(MDFrameError, ArithmeticError):
    def __init__(self, message: str, report: Any = None) -> None:
        super().__init__(message)
        self.report = report


class TruncationNotConvergedError(MDFrameError, ArithmeticError):
    pass
