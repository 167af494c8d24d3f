"""Exception hierarchy shared by all layercast modules."""


class LayercastError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(LayercastError, ValueError):
    """Input parameters violate a documented precondition."""


class InfeasibleError(LayercastError):
    """The requested problem has no feasible point.

    Attributes
    ----------
    constraint : str
        Name of the violated constraint.
    violation : float
        Amount by which the best point found violates it.
    """

    def __init__(self, message, constraint=None, violation=None):
        super().__init__(message)
        self.constraint = constraint
        self.violation = violation


class NumericalError(LayercastError):
    """A numerical routine failed to converge or to bracket a root."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class BoundaryNotFoundError(NumericalError):
    """No sign change of the boundary condition inside the search bracket."""
