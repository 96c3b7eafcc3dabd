"""Exception types raised by ergomom."""


class ErgomomError(Exception):
    """Base class for all library errors."""


class NonPositiveSigma(ErgomomError):
    pass


class OverflowInExponent(ErgomomError):
    pass


class QuadratureFailure(ErgomomError):
    pass


class TailDivergence(ErgomomError):
    pass


class NotErgodic(ErgomomError):
    pass


class BlowUp(ErgomomError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class MomentConditionViolated(ErgomomError):
    def __init__(self, message, which=()):
        super().__init__(message)
        self.which = tuple(which)


class DerivativeMismatch(ErgomomError):
    pass


class NotInClassC(ErgomomError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class InsufficientReplicates(ErgomomError):
    pass


class StudyFailure(ErgomomError):
    pass


class ConfigError(ErgomomError, ValueError):
    pass
