from __future__ import annotations
from typing import Any, Optional


class DgmmError(Exception):
    """Base class for every error raised by dgmmkit."""


class PreconditionError(DgmmError, ValueError):
    """An operation was called with arguments outside its contract."""


class ShapeMismatch(DgmmError, ValueError):
    pass


class NotPositiveDefinite(DgmmError, ValueError):
    pass


class NonPositiveVariance(DgmmError, ValueError):
    pass


class NonFiniteLoss(DgmmError, ArithmeticError):
    """Loss or bound became NaN/Inf.

    ``checkpoint`` holds the last finite training result when raised from
    the training loop.
    """

    def __init__(self, message: str, checkpoint: Optional[Any] = None) -> None:
        super().__init__(message)
        self.checkpoint = checkpoint


class EmptyTrainingSet(DgmmError, ValueError):
    pass


class ZeroVariance(DgmmError, ValueError):
    pass


class DegenerateFolds(DgmmError, ValueError):
    pass


class InvalidConfig(DgmmError, ValueError):
    pass


class ConfigError(DgmmError, ValueError):
    pass


class DimensionMismatch(DgmmError, ValueError):
    pass


class IoError(DgmmError, OSError):
    pass


class MissingFile(IoError):
    pass


class ShapeMismatchWithManifest(IoError):
    pass


class NonFiniteEntry(IoError):
    pass
