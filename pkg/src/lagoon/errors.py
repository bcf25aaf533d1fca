"""Exception hierarchy shared by all Lagoon modules."""


class LagoonError(Exception):
    """Base class for every error raised by this package."""


class InstanceError(LagoonError, ValueError):
    """A problem instance violates its structural invariants."""


class CountMismatchError(LagoonError, ValueError):
    """Recipe counts do not add up to the queue length."""


class QualificationError(LagoonError):
    """A schedule would place a job on a machine not qualified for its recipe."""


class InvalidScheduleError(LagoonError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid schedule: " + "; ".join(self.violations))


class BudgetError(LagoonError, ValueError):
    """Budget too small for the requested optimizer configuration."""


class BudgetExceededError(LagoonError):
    """An optimizer asked for more simulate calls than it was granted."""


class SpaceTooLargeError(LagoonError):
    def __init__(self, size, limit):
        self.size = size
        self.limit = limit
        super().__init__(f"search space of {size} candidates exceeds limit {limit}")


class SingleMachineError(LagoonError, ValueError):
    """Central Complex needs at least two machines."""


class JobSetMismatchError(LagoonError, ValueError):
    """Two schedules do not cover the same set of jobs."""
