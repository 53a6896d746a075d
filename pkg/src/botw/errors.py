"""Exception and warning types raised across the package."""


class BotwError(Exception):
    """Base class for every error raised by botw."""


class ArmSetError(BotwError, ValueError):
    pass


class TooFewArms(ArmSetError):
    pass


class NormViolation(ArmSetError):
    pass


class RankDeficient(ArmSetError):
    pass


class SingularMatrix(BotwError, ArithmeticError):
    """A moment matrix lost positive definiteness (pivot <= 1e-12)."""


class NonFiniteInput(BotwError, ValueError):
    pass


class HorizonMissing(BotwError, ValueError):
    pass


class HorizonExceeded(BotwError, ValueError):
    pass


class LossOutOfRange(BotwError, ValueError):
    pass


class InfeasibleBudget(BotwError, ValueError):
    pass


class ConfigError(BotwError, ValueError):
    pass


class InvariantViolation(BotwError, AssertionError):
    """A per-round runtime invariant failed; ``round_index`` names the row."""

    def __init__(self, message, round_index=None):
        super().__init__(message)
        self.round_index = round_index


class NotConverged(RuntimeWarning):
    """Design solver hit max_iter before reaching the requested tolerance."""


class NonUniqueOptimum(UserWarning):
    pass
