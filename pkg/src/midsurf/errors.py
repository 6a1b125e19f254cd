"""Exception types that map onto the CLI exit-code contract."""


class FormatError(ValueError):
    """Malformed input file (bad magic, truncated payload, ...)."""


class MaskError(ValueError):
    """Degenerate or invalid segmentation mask."""


class TopologyError(RuntimeError):
    """Spherical topology could not be established."""


class NumericalError(ArithmeticError):
    """Non-finite value encountered on the optimization path."""
