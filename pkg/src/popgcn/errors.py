"""Exception hierarchy.

Every error carries a short ``category`` string so the command-line front end
can report a machine-readable failure class.
"""


class PopGcnError(Exception):
    category = "error"


class InvalidInputError(PopGcnError, ValueError):
    category = "invalid_input"


class ShapeMismatchError(InvalidInputError):
    category = "shape_mismatch"


class FormatError(InvalidInputError):
    category = "format"


class NonFiniteError(PopGcnError, FloatingPointError):
    """Raised when a NaN or infinity shows up during a forward pass or training.

    ``layer`` and ``epoch`` are filled in when known.
    """

    category = "non_finite"

    def __init__(self, message, layer=None, epoch=None):
        super().__init__(message)
        self.layer = layer
        self.epoch = epoch


class ConvergenceError(PopGcnError, RuntimeError):
    category = "convergence"

    def __init__(self, message, round_index=None):
        super().__init__(message)
        self.round_index = round_index


class ReportIOError(PopGcnError, OSError):
    category = "io"

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path
