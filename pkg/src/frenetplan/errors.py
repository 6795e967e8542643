"""Exception hierarchy shared by all modules."""


class FrenetPlanError(Exception):
    pass


class ParameterError(FrenetPlanError, ValueError):
    """Invalid argument shape, range or combination."""


class FactorizationError(FrenetPlanError):
    """The KKT matrix could not be factorized."""


class UsageError(FrenetPlanError, RuntimeError):
    """An API was called out of order (e.g. projecting without a factor)."""


class OptimizationError(FrenetPlanError):
    pass


class SpawnError(FrenetPlanError):
    pass


class TrainingError(FrenetPlanError):
    pass
