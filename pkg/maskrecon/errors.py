from typing import List, Tuple


class MaskReconError(Exception):
    """Base class for every error raised by maskrecon."""


class ShapeError(MaskReconError, ValueError):
    """Grid dimensions do not agree (depth vs. intrinsics, image vs. mask, ...)."""


class PFMError(MaskReconError, ValueError):
    """Malformed or truncated PFM payload."""


class SceneError(MaskReconError, ValueError):
    """Synthetic scene cannot be rendered from the requested camera, or unknown preset."""


class MetricsError(MaskReconError, ValueError):
    """Evaluation inputs leave nothing to evaluate."""


class DivergenceError(MaskReconError, RuntimeError):
    """Refinement produced a non-finite loss. The trace so far is attached."""

    def __init__(self, message: str, trace: List[Tuple[int, float, float]]):
        super().__init__(message)
        self.trace = trace


class UsageError(MaskReconError, ValueError):
    """Command line could not be parsed."""
