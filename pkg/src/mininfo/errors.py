"""Exception types shared across the package."""


class MininfoError(Exception):
    """Base class for all package-specific errors."""


class ModelError(MininfoError):
    """A model (MDP, policy, grid spec, ...) is structurally invalid."""


class InvalidDistributionError(ModelError):
    """A probability vector has negative entries or does not sum to one."""


class InvalidPolicyError(ModelError):
    """A policy puts mass on disabled actions or rows do not normalize."""


class InvalidPathError(ModelError):
    """A path contains a transition of zero probability."""


class RecurrenceError(MininfoError):
    """A state declared transient is actually recurrent (or vice versa)."""


class DomainError(MininfoError):
    """A numeric function was evaluated outside its finite-value domain."""


class UnsupportedModelError(MininfoError):
    """An operation requires metadata the model does not carry."""


class GridSpecError(ModelError):
    """A grid-world specification is inconsistent."""


class SearchCapError(MininfoError):
    """The exhaustive union search would enumerate too many subsets."""


class NumericalFailureError(MininfoError):
    """The solver failed to converge.  Carries the best iterate found."""

    def __init__(self, message, best_x=None):
        super().__init__(message)
        self.best_x = best_x
