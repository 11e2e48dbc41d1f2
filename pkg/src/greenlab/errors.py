"""Exception types shared across greenlab."""


class GreenlabError(Exception):
    """Base class for all greenlab errors."""


class EmptyBall(GreenlabError, ValueError):
    pass


class DisconnectedDomain(GreenlabError, ValueError):
    pass


class NonConvergence(GreenlabError, RuntimeError):
    """Raised when the energy minimizer exhausts its iteration budget."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class InvalidProblem(GreenlabError, ValueError):
    pass


class EmptyLevelSet(GreenlabError, ValueError):
    pass


class InsufficientRows(GreenlabError, ValueError):
    pass


class InvalidCutoff(GreenlabError, ValueError):
    pass


class SingularityOnBoundary(GreenlabError, ValueError):
    pass


class EmptyShell(GreenlabError, ValueError):
    pass


class InsufficientShells(GreenlabError, ValueError):
    pass
