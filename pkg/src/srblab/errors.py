"""Exception types shared across the package."""


class SrblabError(Exception):
    """Base class for all srblab errors."""


class InvalidInputError(SrblabError):
    """Input violates a documented precondition."""


class OutOfBoundsError(SrblabError):
    """Query point lies outside the terrain extent."""


class SingularHeadingError(SrblabError):
    """Body z-axis is vertical; the heading frame is undefined."""


class LogBranchError(SrblabError):
    """Rotation angle at or near pi; the matrix logarithm branch is ambiguous."""


class QPInfeasibleError(SrblabError):
    """Equality system of the QP has no solution."""


class QPNoConvergenceError(SrblabError):
    """QP solver exceeded its iteration cap."""


class SimulationError(SrblabError):
    """A simulation step failed; carries solver diagnostics."""


class ParseError(SrblabError):
    """A file failed schema validation. Message names the offending field."""


class TransitionError(SrblabError):
    """Requested controller transition is incompatible at the given phase."""
