class DistqnError(Exception):
    """Base class for package errors."""


class DisconnectedGraphError(DistqnError, ValueError):
    pass


class DimensionError(DistqnError, ValueError):
    pass


class DivergenceError(DistqnError, RuntimeError):
    """A solver produced a non-finite iterate.

    ``trace`` holds the metrics recorded up to the last finite iterate and
    ``iteration`` the index of the offending step.
    """

    def __init__(self, message, iteration=None, trace=None):
        super().__init__(message)
        self.iteration = iteration
        self.trace = trace


class ConvergenceError(DistqnError, RuntimeError):
    pass


class ConfigError(DistqnError, ValueError):
    """An experiment configuration is malformed or inconsistent."""


class SolverError(DistqnError, RuntimeError):
    """A solver inside an experiment failed; ``solver`` names it."""

    def __init__(self, solver, cause):
        super().__init__(f"solver {solver!r}: {cause}")
        self.solver = solver
        self.cause = cause
