"""Error categories shared across the package.

The command line maps these onto exit codes: usage problems (bad arguments,
misconfigured calls) exit 1, data and file problems exit 2.
"""


class UsageError(ValueError):
    """A call or command was made with invalid arguments or configuration."""


class ShapeError(UsageError):
    """Tensor dimensions do not satisfy an operator's requirements."""


class IngestionError(RuntimeError):
    """An input image or dataset could not be read."""


class FormatError(RuntimeError):
    """A weights file is not in the expected binary format."""


class IntegrityError(RuntimeError):
    """A weights file parses but its contents disagree with the architecture."""
