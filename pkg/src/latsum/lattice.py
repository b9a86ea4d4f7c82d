"""Bravais lattice geometry.

A lattice is the point set ``A @ Z^d`` for a regular generator matrix ``A``
whose columns are the basis vectors.  The reciprocal lattice is generated by
``inv(A).T`` and its elementary cell, the Brillouin zone, is the image of the
centered unit cube ``(-1/2, 1/2)^d`` under ``inv(A).T``.

Dimensions 1 through 4 are supported; matrices are small dense arrays and
instances are immutable after construction, so they can be shared freely
between threads.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import LatticeError

MAX_DIM = 4

_SQRT2 = math.sqrt(2.0)
_SQRT3 = math.sqrt(3.0)


class Lattice:
    """Bravais lattice defined by a regular ``d x d`` generator matrix."""

    __slots__ = ("a", "d", "volume", "a_inv_t", "_key")

    def __init__(self, a):
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise LatticeError(f"generator must be a square matrix, got shape {a.shape}")
        d = a.shape[0]
        if not 1 <= d <= MAX_DIM:
            raise LatticeError(f"dimension {d} outside supported range 1..{MAX_DIM}")
        if not np.all(np.isfinite(a)):
            raise LatticeError("generator contains non-finite entries")
        det = np.linalg.det(a)
        if abs(det) < 1e-300 or not np.isfinite(det):
            raise LatticeError("generator matrix is singular")
        self.a = a.copy()
        self.a.flags.writeable = False
        self.d = d
        self.volume = abs(det)
        self.a_inv_t = np.linalg.inv(a).T
        self.a_inv_t.flags.writeable = False
        self._key = (d, self.a.tobytes())

    def __eq__(self, other):
        return isinstance(other, Lattice) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        rows = ";".join(",".join(f"{x:.17g}" for x in row) for row in self.a)
        return f"Lattice(d={self.d};A={rows})"

    def reciprocal(self) -> "Lattice":
        """Dual lattice generated by the inverse transpose of the generator."""
        return Lattice(self.a_inv_t)

    def scaled(self, s: float) -> "Lattice":
        """Uniformly rescaled lattice ``s * Lambda``."""
        if not s > 0:
            raise LatticeError("scale must be positive")
        return Lattice(s * self.a)

    def brillouin_zone(self) -> "BrillouinZone":
        return BrillouinZone(self)

    def integer_box(self, radius: int) -> np.ndarray:
        """All lattice points ``A @ n`` with ``max_i |n_i| <= radius``, row per point."""
        grids = np.meshgrid(*([np.arange(-radius, radius + 1)] * self.d), indexing="ij")
        n = np.stack([g.ravel() for g in grids], axis=-1)
        return n @ self.a.T

    def min_distance(self, search_radius: int = 3) -> float:
        """Shortest nonzero lattice vector length, by brute-force enumeration."""
        pts = self.integer_box(search_radius)
        r = np.linalg.norm(pts, axis=1)
        return float(r[r > 1e-14].min())


class BrillouinZone:
    """Elementary cell of the reciprocal lattice, ``inv(A).T @ (-1/2, 1/2)^d``.

    Kept implicit: the zone is represented by the reciprocal generator acting
    on the centered unit cube, never materialized as a polytope.
    """

    __slots__ = ("parent", "a_inv_t", "corner_radius")

    def __init__(self, parent: Lattice):
        self.parent = parent
        self.a_inv_t = parent.a_inv_t
        d = parent.d
        corners = np.array(np.meshgrid(*([[-0.5, 0.5]] * d), indexing="ij")).reshape(d, -1).T
        self.corner_radius = float(np.linalg.norm(corners @ self.a_inv_t.T, axis=1).max())

    @property
    def volume(self) -> float:
        return 1.0 / self.parent.volume

    def reduce(self, k) -> np.ndarray:
        """Translate ``k`` by reciprocal lattice vectors into ``inv(A).T [-1/2, 1/2)^d``."""
        k = np.asarray(k, dtype=float)
        kappa = k @ self.parent.a  # fractional coordinates: kappa = A^T k
        kappa = kappa - np.floor(kappa + 0.5)
        return kappa @ self.a_inv_t.T

    def contains(self, k, tol: float = 1e-12) -> bool:
        kappa = np.asarray(k, dtype=float) @ self.parent.a
        return bool(np.all(np.abs(kappa) <= 0.5 + tol))


_HEX = np.array([[1.0, 0.5], [0.0, _SQRT3 / 2.0]])
_FCC = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]) / _SQRT2
_BCC = np.array([[1.0, 1.0, 0.0], [_SQRT2, 0.0, _SQRT2], [0.0, _SQRT2, _SQRT2]]) / _SQRT3

_NAMED = {
    "integer_1d": np.array([[1.0]]),
    "square": np.eye(2),
    "hexagonal": _HEX,
    "fcc": _FCC,
    "bcc": _BCC,
}

_ALIASES = {
    "z": "integer_1d",
    "integer": "integer_1d",
    "chain": "integer_1d",
    "sq": "square",
    "hex": "hexagonal",
}


def named_lattice(name: str, scale: float = 1.0) -> Lattice:
    """Catalog lattice by name, rescaled by ``scale``.

    Known names (with aliases): ``integer_1d`` (``Z``), ``square`` (``sq``),
    ``hexagonal`` (``hex``), ``fcc``, ``bcc``.  The cubic entries are
    normalized to unit nearest-neighbor distance at ``scale = 1``.
    """
    if not scale > 0:
        raise LatticeError("scale must be positive")
    key = name.strip().lower()
    key = _ALIASES.get(key, key)
    if key not in _NAMED:
        raise LatticeError(f"unknown lattice name {name!r}; known: {sorted(_NAMED)}")
    return Lattice(scale * _NAMED[key])


def parse_lattice_spec(text: str) -> Lattice:
    """Parse a lattice given as a named preset or an explicit matrix.

    Accepted forms::

        hex            named preset
        hex:2.5        named preset with scale
        d=2;A=1,0.5;0,0.866   explicit row-listed generator

    """
    text = text.strip()
    if text.lower().startswith("d="):
        parts = text.split(";")
        try:
            d = int(parts[0][2:])
        except ValueError as exc:
            raise LatticeError(f"bad dimension in lattice spec {text!r}") from exc
        rows = parts[1:]
        if rows and rows[0].lower().startswith("a="):
            rows[0] = rows[0][2:]
        if len(rows) != d:
            raise LatticeError(f"expected {d} matrix rows in lattice spec, got {len(rows)}")
        try:
            a = np.array([[float(x) for x in row.split(",")] for row in rows])
        except ValueError as exc:
            raise LatticeError(f"bad matrix entry in lattice spec {text!r}") from exc
        if a.shape != (d, d):
            raise LatticeError(f"matrix shape {a.shape} does not match d={d}")
        return Lattice(a)
    if ":" in text:
        name, _, scale_text = text.partition(":")
        try:
            scale = float(scale_text)
        except ValueError as exc:
            raise LatticeError(f"bad scale in lattice spec {text!r}") from exc
        return named_lattice(name, scale)
    return named_lattice(text)
