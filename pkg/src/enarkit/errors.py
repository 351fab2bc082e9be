"""Exception types shared across the package."""

from __future__ import annotations


class EnarkitError(Exception):
    """Base class for all enarkit errors."""


class IsolatedNode(EnarkitError):
    """A node has degree zero where a positive degree is required."""

    def __init__(self, node: int):
        self.node = node
        super().__init__(f"node {node} is isolated (degree 0)")


class InvalidProbability(EnarkitError):
    """An edge probability fell outside [0, 1]."""

    def __init__(self, i: int, j: int, p: float):
        self.i, self.j, self.p = i, j, p
        super().__init__(f"edge probability p[{i},{j}] = {p!r} is outside [0, 1]")


class IsolationRetriesExceeded(EnarkitError):
    """Graph regeneration kept producing isolated nodes."""


class EigConvergenceFailure(EnarkitError):
    """The iterative eigensolver failed to converge."""


class ShapeMismatch(EnarkitError):
    """Two arrays that must share a shape do not."""


class NotStationary(EnarkitError):
    """|alpha| + |theta| >= 1: no stationary solution exists."""


class LyapunovNonconvergence(EnarkitError):
    """The stationary-covariance fixed point did not converge."""


class CholeskyFailure(EnarkitError):
    """Covariance factorization failed even after diagonal jitter."""


class DimensionMismatch(EnarkitError):
    """Inputs have incompatible dimensions."""


class RankDeficient(EnarkitError):
    """The design matrix is numerically rank deficient."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient in columns {self.columns}")


class ZeroDenominator(EnarkitError):
    """A relative-error denominator is zero."""


class EmptyGroup(EnarkitError):
    """A summary was requested over an empty group."""


class DataError(EnarkitError):
    """A data file failed to parse or validate."""
