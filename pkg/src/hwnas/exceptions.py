"""Exception and warning classes used across hwnas."""


class GroupingError(ValueError):
    """A layer cannot be mapped onto any slot of the subgraph template."""


class InvalidAllocation(ValueError):
    """A kernel allocation is not valid for the kernel kind it is applied to."""


class Infeasible(RuntimeError):
    """No configuration satisfies the resource or latency constraints.

    ``constraint`` names the violated constraint (``"dsp"``, ``"luts"``,
    ``"bram"``, ``"combined"`` or ``"latency"``).
    """

    def __init__(self, constraint, message=None):
        self.constraint = constraint
        super().__init__(message or f"infeasible: {constraint} constraint cannot be met")


class DegenerateFit(ValueError):
    """Linear fit requested on abscissae that are all equal."""


class BadProfile(ValueError):
    """A sensitivity profile entry has neither a weight tensor nor a range."""


class TooManyLayers(ValueError):
    """Architecture has more layers than the feature encoding supports."""


class DimensionMismatch(ValueError):
    """Feature vector length does not match the fitted model."""


class EmptyPool(RuntimeError):
    """Architecture search produced no feasible candidates for a budget."""


class DegenerateDataWarning(UserWarning):
    """Training data has zero-variance features; they are dropped."""
