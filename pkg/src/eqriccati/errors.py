"""Exception hierarchy shared by all solver modules."""


class EreError(Exception):
    """Base class for every error raised by eqriccati."""


class ShapeMismatch(EreError, ValueError):
    pass


class NonFinite(EreError, ArithmeticError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NotPositiveDefinite(EreError, ArithmeticError):
    def __init__(self, message, node=None, min_eig=None):
        super().__init__(message)
        self.node = node
        self.min_eig = min_eig


class MaxItersExceeded(EreError, RuntimeError):
    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class WindowCollapse(EreError, RuntimeError):
    pass


class InsufficientHistory(EreError, ValueError):
    pass


class MonotonicityViolated(EreError, ValueError):
    pass


class PositivityViolated(EreError, ValueError):
    pass


class TimeDependentWeights(EreError, ValueError):
    pass


class ParseError(EreError, ValueError):
    pass


class ValidationError(EreError, ValueError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
