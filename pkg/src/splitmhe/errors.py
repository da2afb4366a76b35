"""Exception hierarchy for the solver toolkit."""

from __future__ import annotations


class SplitMheError(Exception):
    """Base class for all toolkit errors."""


class OriginSingularityError(SplitMheError):
    """Range/bearing observation evaluated too close to the sensor origin."""


class PartitionError(SplitMheError):
    """Invalid horizon partition (sub-window count out of range)."""


class DimensionMismatchError(SplitMheError):
    """Array dimensions inconsistent with the declared problem sizes."""


class ScenarioError(SplitMheError):
    """Scenario generation or scenario-file parsing failed."""


class FactorizationError(SplitMheError):
    """A required matrix factorization failed; `block_index` names the block
    when the failure is block-local."""

    def __init__(self, message: str, block_index: int | None = None):
        super().__init__(message)
        self.block_index = block_index


class NotPositiveDefiniteError(FactorizationError):
    """A block Hessian is not positive definite."""


class RankDeficientConstraintsError(FactorizationError):
    """A block constraint Jacobian is not full row rank."""


class SingularSchurError(FactorizationError):
    """The coupling Schur matrix is singular or numerically near-singular."""


class SingularKktError(FactorizationError):
    """An assembled KKT matrix is singular."""


class LocalSolveError(SplitMheError):
    """The inner sub-problem solver failed even after regularization."""
