"""
Exception types raised by the solvers and the study harness.

Each derives from the builtin a caller would otherwise expect, so plain
``except ValueError`` / ``except RuntimeError`` keeps working.
"""

from typing import Optional, Tuple


class UnderResolvedGridError(ValueError):
    """Grid spacing too coarse for the obstacle size."""

    def __init__(self, h: float, epsilon: float, factor: int):
        self.h = h
        self.epsilon = epsilon
        super().__init__(
            f"Grid spacing h={h:.4g} does not resolve obstacles of size eps={epsilon:.4g}; "
            f"need h <= eps/{factor} = {epsilon / factor:.4g}"
        )


class LatticeError(ValueError):
    """Lattice parameters outside the supported regime."""


class NonZeroMeanError(ValueError):
    """Right-hand side violates a zero-mean solvability condition."""

    def __init__(self, mean: float, scale: float, context: str):
        self.mean = mean
        super().__init__(
            f"{context}: right-hand side has mean {mean:.3e} (scale {scale:.3e}); "
            f"a zero-mean right-hand side is required"
        )


class SupportError(ValueError):
    """Field support violates a placement requirement."""


class EmptyMaskError(ValueError):
    """Norm requested over a mask with no nodes."""


class UnsupportedShapeError(NotImplementedError):
    """Construction exists only for a subset of obstacle shapes."""


class CFLViolationError(RuntimeError):
    """Time step exceeds the advective or diffusive stability bound."""

    def __init__(self, dt: float, limit: float, kind: str = "advective"):
        self.dt = dt
        self.limit = limit
        super().__init__(f"Time step dt={dt:.4g} exceeds the {kind} limit {limit:.4g}")


class SolverError(RuntimeError):
    """Linear or time-stepping solver failed to meet its tolerance."""

    def __init__(self, message: str, residual: Optional[float] = None):
        self.residual = residual
        super().__init__(message if residual is None else f"{message} (residual {residual:.3e})")


class CellSolveError(SolverError):
    """Cell divergence problem failed for one obstacle."""

    def __init__(self, index: Tuple[int, int], cause: Exception):
        self.index = index
        self.cause = cause
        super().__init__(f"Cell problem for obstacle {index} failed: {cause}", getattr(cause, "residual", None))


class SingularSystemError(RuntimeError):
    """Dense constraint system is numerically singular."""


class DegenerateSweepError(ValueError):
    """Sweep cannot be fitted or tied."""


class SnapshotFormatError(ValueError):
    """Snapshot file is not in the expected binary layout."""
