"""Exception types shared across the package.

The CLI maps these onto exit codes: validation problems exit 2, solver
non-convergence exits 3, missing upstream artifacts exit 4.
"""


class ValidationError(ValueError):
    """A contract precondition or config invariant is violated."""


class BoundsError(ValidationError):
    """Geometry does not fit inside the computational domain."""


class PlacementError(ValidationError):
    """A probe or source is placed in an illegal region (e.g. inside PML)."""


class MaskFormatError(ValidationError):
    """A mask file failed to parse.

    Carries the 1-based line number and byte offset of the failure when
    they are known.
    """

    def __init__(self, message, line=None, offset=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if offset is not None:
            loc.append(f"offset {offset}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.line = line
        self.offset = offset


class ConvergenceError(RuntimeError):
    """The harmonic solve did not reach steady state within its budget.

    The achieved convergence metric (relative change of the probe map
    between the last two cycle windows) is attached as ``metric``.
    """

    def __init__(self, message, metric=None):
        super().__init__(message)
        self.metric = metric


class MissingArtifactError(FileNotFoundError):
    """A pipeline stage requires an output file that a previous stage
    has not produced."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage
