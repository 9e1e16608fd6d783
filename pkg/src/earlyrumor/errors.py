"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DegenerateInputError(ValueError):
    """Input is well-typed but mathematically degenerate (e.g. a zero-norm vector)."""


class NonFiniteError(FloatingPointError):
    """A forward value or gradient became NaN or infinite."""


class ContractError(RuntimeError):
    """A caller violated an operation's precondition."""


class TrainingAborted(RuntimeError):
    """Training stopped because a loss or gradient became non-finite.

    ``diagnostics`` carries whatever the loop knew at the time (step, epoch,
    offending parameter name).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given labels (e.g. AUC with one class)."""
