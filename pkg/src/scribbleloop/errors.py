"""Exception types shared across the package."""


class ScribbleLoopError(Exception):
    """Base class for all package-specific errors."""


class DegenerateInputError(ScribbleLoopError):
    """Input is structurally valid but too degenerate to process."""


class GeometryError(ScribbleLoopError):
    """A geometric construction failed (non-simple polygon, bad triangulation)."""


class FeatureFileError(ScribbleLoopError):
    """A feature file violates the documented schema.

    Carries the 1-based line number of the offending record when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ContradictoryScribbleError(ScribbleLoopError):
    """The same patch was asserted both tumor and non-tumor in one pass."""
