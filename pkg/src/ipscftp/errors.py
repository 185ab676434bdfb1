"""Exception types shared across the package.

Every error raised by the library derives from :class:`IpsError`, so CLI
entry points can map failures to the documented exit codes in one place.
"""


class IpsError(Exception):
    """Base class for all library errors."""


class DegenerateChain(IpsError):
    """The finite-window chain has no unique stationary distribution."""


class DegenerateRates(IpsError):
    """A rate aggregate required by a closed-form expression is zero."""


class NonDegenerateViolated(IpsError):
    """A coupling spec needs positive lock rates that the model does not have."""


class CouplingUnreachable(IpsError):
    """No coupling event was found within the lookback limit."""


class ClosureBudgetExceeded(IpsError):
    """The ambiguity closure grew past its point budget."""


class SubcriticalityGateFailed(IpsError):
    """Sampling refused: the growth parameter is not known to be < 1."""

    def __init__(self, message, growth=None):
        super().__init__(message)
        self.growth = growth


class DualStartMismatch(IpsError):
    """Two distinct fill configurations resolved to different states."""


class WidthAssertionFailed(IpsError):
    """A coupling window touched sites outside its declared width."""


class SupercriticalInput(IpsError):
    """A bound evaluator was handed a growth parameter >= 1."""


class HorizonExceeded(IpsError):
    """A flow evaluation hit the defensive recursion-node limit."""


class ModelFileError(IpsError):
    """A model file failed to parse or validate; carries line information."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
