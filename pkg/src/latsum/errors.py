"""Exception types shared across the package."""


class LatticeError(ValueError):
    """Invalid lattice: singular generator or unsupported dimension."""


class PoleError(ArithmeticError):
    """The requested value sits on a pole of the meromorphic continuation."""


class ConvergenceError(ArithmeticError):
    """Adaptive refinement exhausted its depth budget without meeting tolerance."""


class TruncationWarning(UserWarning):
    """The highest retained Taylor order still contributes significantly."""
