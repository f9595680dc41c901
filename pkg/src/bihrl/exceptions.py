"""Exception types raised across the package."""


class ModelError(ValueError):
    """An MDP or option set violates a structural precondition."""


class OptionDivergenceError(ModelError):
    """An option's in-option model has no finite solution (it may never terminate)."""


class ContractError(ValueError):
    """An argument is inconsistent with the object it is evaluated against."""


class CapacityError(RuntimeError):
    """Option-trajectory enumeration exceeded its live-path cap."""

    def __init__(self, message, trajectory_id=None):
        super().__init__(message)
        self.trajectory_id = trajectory_id


class DegenerateEvidenceError(ValueError):
    """Every candidate reward assigns zero probability to the observations."""


class DataError(ValueError):
    """Input data files are unusable."""


class CacheMismatchError(RuntimeError):
    """A cached solution was built for a different graph or hyperparameters."""


class ConvergenceWarning(UserWarning):
    """Value iteration stopped at its iteration cap before reaching tolerance."""
