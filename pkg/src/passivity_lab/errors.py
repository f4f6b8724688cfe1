"""Exception hierarchy shared across modules."""

from __future__ import annotations


class PassivityLabError(Exception):
    """Base class for toolkit errors."""


class DimensionMismatchError(PassivityLabError, ValueError):
    pass


class AlgebraicLoopSingularError(PassivityLabError):
    """The linear per-sample loop matrix ``I + D2 D1`` is singular."""


class IllPosedAtSampleError(PassivityLabError):
    """A per-sample algebraic loop failed to converge.

    Attributes
    ----------
    sample : int
        Index of the first sample that failed.
    residual_history : list of float
        Residual norms of the failed solve, one per iteration.
    """

    def __init__(self, sample: int, residual_history=None, message: str | None = None):
        self.sample = int(sample)
        self.residual_history = list(residual_history or [])
        last = self.residual_history[-1] if self.residual_history else float("nan")
        super().__init__(message or f"algebraic loop did not converge at sample {sample} "
                                    f"(last residual {last:.3e})")


class PoleOnGridError(PassivityLabError, ValueError):
    pass


class UnsupportedOperatorError(PassivityLabError):
    pass


class DegenerateEnsembleError(PassivityLabError, ValueError):
    pass


class UndefinedIndexError(PassivityLabError):
    pass


class EmptyFamilyError(PassivityLabError):
    pass


class ArityError(PassivityLabError, ValueError):
    pass
