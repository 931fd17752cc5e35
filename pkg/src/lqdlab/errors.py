"""Exception hierarchy.

Every error carries a module-qualified ``code`` so the CLI can report
failures in a machine-readable way.
"""


class LqdLabError(Exception):
    module = "lqdlab"

    @property
    def code(self):
        return f"{self.module}.{type(self).__name__}"


# trace-model

class TraceError(LqdLabError, ValueError):
    module = "trace"


class NonPositiveCount(TraceError):
    pass


class PortOutOfRange(TraceError):
    pass


class ZeroDimensions(TraceError):
    pass


class InputMLessThanN(TraceError):
    pass


class NonPositiveTimestep(TraceError):
    pass


class CountTooLarge(TraceError):
    pass


class TraceSyntaxError(TraceError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


# switch-sim

class SwitchError(LqdLabError):
    module = "switch"


class InvalidThreshold(SwitchError, ValueError):
    pass


# offline-opt

class OptError(LqdLabError):
    module = "opt"


class BudgetExceeded(OptError):
    def __init__(self, bound, budget):
        self.bound = bound
        self.budget = budget
        super().__init__(f"state-space bound {bound} exceeds budget {budget}")


class InfeasibleSchedule(OptError):
    pass


# analysis

class AnalysisError(LqdLabError):
    module = "analysis"


class MismatchedTrace(AnalysisError):
    pass


class EmptyDenominator(AnalysisError, ZeroDivisionError):
    pass


class NotAnOverflowTimestep(AnalysisError):
    pass


# transforms

class TransformError(LqdLabError):
    module = "transforms"


class NoFreshQueue(TransformError):
    pass


class NonConvergence(TransformError):
    pass


# matcher

class MatcherError(LqdLabError):
    module = "matcher"


class NotIdealFine(MatcherError):
    pass


class ExhaustedFreePackets(MatcherError):
    def __init__(self, message, t=None, queue=None, position=None, timeline=None):
        self.t = t
        self.queue = queue
        self.position = position
        self.timeline = timeline
        super().__init__(message)


class LedgerError(MatcherError):
    def __init__(self, message, t=None, queue=None, position=None):
        self.t = t
        self.queue = queue
        self.position = position
        super().__init__(f"{message} at t={t} queue={queue} position={position}")


class InvalidConnection(LedgerError):
    pass


class DuplicateTarget(LedgerError):
    pass
