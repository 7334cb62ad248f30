"""Exception hierarchy.  Every numerical failure derives from ``SweepError``."""


class SweepError(Exception):
    """Base class for numerical failures raised by this package."""


class InfeasiblePoint(SweepError):
    pass


class EmptyPolyhedron(SweepError):
    pass


class NotInNormalCone(SweepError):
    pass


class NotInGraph(SweepError):
    pass


class DomainViolation(SweepError):
    pass


class StepFailure(SweepError):
    def __init__(self, message, step=None, constraint=None):
        super().__init__(message)
        self.step = step
        self.constraint = constraint


class PLICQViolation(SweepError):
    pass


class InfeasibleInput(SweepError):
    pass


class MeshMismatch(SweepError):
    pass


class FamilyMismatch(SweepError):
    pass


class NoFeasibleStart(SweepError):
    pass


class PrimalInfeasible(SweepError):
    pass


class PatternBudgetExceeded(SweepError):
    pass


class DimensionMismatch(SweepError):
    pass
