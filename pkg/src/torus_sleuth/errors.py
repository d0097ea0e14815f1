"""Exception types shared across the package."""


class TorusSleuthError(Exception):
    """Base class for all package errors."""


class OutOfDomain(TorusSleuthError):
    pass


class DomainEscape(TorusSleuthError):
    """Raised when an orbit of the action-angle-angle map leaves [a, b]."""

    def __init__(self, index, z):
        self.index = index
        self.z = z
        super().__init__(f"action left the domain at iterate {index} (z={z!r})")


class SingularAxis(TorusSleuthError):
    """The swirl term 2c/r**2 diverges on the symmetry axis."""


class StepFailure(TorusSleuthError):
    pass


class TooShort(TorusSleuthError):
    pass


class RankDeficient(TorusSleuthError):
    pass


class OutsideSeparatrix(TorusSleuthError):
    pass


class ChartRange(TorusSleuthError):
    pass


class BadDelta(TorusSleuthError):
    pass


class ResonantZ(TorusSleuthError):
    def __init__(self, z, k):
        self.z = z
        self.k = k
        super().__init__(f"|1 - exp(i k z)| below the Diophantine floor at z={z!r}, k={k}")


class ResonantOmega(TorusSleuthError):
    pass


class NewtonDivergence(TorusSleuthError):
    pass


class TwistViolation(TorusSleuthError):
    pass


class Inadmissible(TorusSleuthError):
    """A schedule's admissibility precondition fails (distinct from a FAIL verdict)."""

    def __init__(self, message, lhs=None, rhs=None):
        self.lhs = lhs
        self.rhs = rhs
        super().__init__(message)


class ScheduleMissing(TorusSleuthError):
    pass


class ConfigError(TorusSleuthError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
