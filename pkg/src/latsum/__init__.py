"""Lattice sums of many-body power-law interactions via Epstein zeta integrals."""

from .lattice import Lattice, BrillouinZone, named_lattice, parse_lattice_spec
from .errors import LatticeError, PoleError, ConvergenceError, TruncationWarning

__version__ = "0.1.0"

__all__ = [
    "Lattice",
    "BrillouinZone",
    "named_lattice",
    "parse_lattice_spec",
    "LatticeError",
    "PoleError",
    "ConvergenceError",
    "TruncationWarning",
    "__version__",
]
