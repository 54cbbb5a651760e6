"""Exception hierarchy shared by all modules."""


class ErgodicHJBError(Exception):
    """Base class for every error raised by this package."""


class OutsideCollar(ErgodicHJBError):
    """A point lies outside the boundary collar where d is C^2."""


class BadDelta(ErgodicHJBError):
    """A ring width is non-positive or exceeds the collar width."""


class MissingCost(ErgodicHJBError):
    pass


class MissingTerminalCost(ErgodicHJBError):
    pass


class TooCoarse(ErgodicHJBError):
    pass


class NonDiagonalDiffusion(ErgodicHJBError):
    pass


class NonMonotone(ErgodicHJBError):
    pass


class ShapeMismatch(ErgodicHJBError):
    pass


class GridMismatch(ErgodicHJBError):
    pass


class NoConvergence(ErgodicHJBError):
    def __init__(self, message, best_residual=float("nan")):
        super().__init__(message)
        self.best_residual = best_residual


class Singular(ErgodicHJBError):
    pass


class ScheduleTooShort(ErgodicHJBError):
    pass


class BadStart(ErgodicHJBError):
    pass


class PreconditionsUnmet(ErgodicHJBError):
    """A verification was requested on a problem that fails its hypotheses."""


class ConfigError(ErgodicHJBError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class StageError(ErgodicHJBError):
    """Wraps an error raised inside a pipeline stage and records the stage name."""

    def __init__(self, stage, error):
        super().__init__(f"[{stage}] {type(error).__name__}: {error}")
        self.stage = stage
        self.error = error
