"""Exception hierarchy shared by all modules."""


class MinkGaussError(Exception):
    """Base class for every error raised by the package."""


class InvalidCapUnion(MinkGaussError, ValueError):
    pass


class EmptyFamily(MinkGaussError):
    pass


class DegenerateHull(MinkGaussError):
    pass


class ToleranceNotMet(MinkGaussError):
    pass


class NonMonotoneTail(MinkGaussError):
    pass


class BracketFailure(MinkGaussError):
    pass


class VerificationFailed(MinkGaussError):
    def __init__(self, prop, witness=None, message=""):
        self.prop = prop
        self.witness = witness
        super().__init__(f"{prop} violated at {witness}: {message}".strip())


class GapTooSmall(MinkGaussError):
    pass


class NotSpacelike(MinkGaussError):
    pass


class NotConvex(MinkGaussError):
    pass


class NoConvergence(MinkGaussError):
    pass


class SingularHessian(MinkGaussError):
    pass


class LineSearchStalled(MinkGaussError):
    pass


class MaxIterations(MinkGaussError):
    pass


class NotSpacelikeCompatible(MinkGaussError):
    pass


class OrderingViolated(MinkGaussError):
    def __init__(self, witness, margin):
        self.witness = witness
        self.margin = margin
        super().__init__(f"ordering violated at {witness} by {margin:.3e}")


class StepCollapse(MinkGaussError):
    pass


class NoDecay(MinkGaussError):
    pass


class Timeout(MinkGaussError):
    pass


class NotCauchy(MinkGaussError):
    pass


class BoundViolated(MinkGaussError):
    def __init__(self, witness, ratio):
        self.witness = witness
        self.ratio = ratio
        super().__init__(f"gradient bound violated at node {witness}: ratio {ratio:.6f}")


class MonitorExceeded(MinkGaussError):
    def __init__(self, time, node, value, limit):
        self.time = time
        self.node = node
        super().__init__(f"monitor {value:.6g} exceeds {limit:.6g} at t={time:.6g}, node {node}")


class DimensionUnsupported(MinkGaussError):
    pass


class NotDecreasing(MinkGaussError):
    def __init__(self, radius, values):
        self.radius = radius
        super().__init__(f"sup over rapidities not decreasing at R={radius}: {values}")
