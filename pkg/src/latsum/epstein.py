"""Epstein zeta functions on Bravais lattices.

The simple Epstein zeta function of a lattice ``Lambda = A Z^d`` is

    Z(nu, k) = sum'_{z in Lambda} exp(-2 pi i z.k) / |z|^nu

for ``Re nu > d``, continued meromorphically elsewhere.  Evaluation uses the
classical theta-split: writing ``|z|^-nu`` as a Gaussian integral and applying
Poisson summation below the split point turns the sum into two superexponentially
convergent sums of incomplete gamma terms, one over the lattice and one over its
reciprocal, plus elementary boundary terms.  The split point is balanced on the
lattice scale so both sums need a comparable number of shells.

Near ``k = 0`` the function carries an explicit singularity

    Z(nu, k) = Z_reg(nu, k) + shat(nu, k) / V

where ``shat`` is a pure power ``|k|^(nu-d)`` for generic ``nu`` and a
``|k|^(2m) log(pi k^2)`` term when ``nu = d + 2m``.  ``Z_reg`` is analytic on
the closed Brillouin zone; this module evaluates it directly (the reciprocal
``q = 0`` term minus the singularity collapses to an entire series) and also
provides its exact partial derivatives at ``k = 0``, obtained by
differentiating the Gaussian representation term by term: derivatives of
Gaussians are Hermite polynomials, so every derivative is again a finite
combination of incomplete gamma values.

All evaluators are vectorized over batches of ``k`` points and contexts are
immutable after construction, so they can be shared across threads.
"""
from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import PoleError
from .incgamma import exp1_plus_log, upper_gamma
from .lattice import Lattice

# Branch labels for the singularity type of Z at k = 0.
GENERIC = "generic"
LOG_CASE = "log_case"
TRIVIAL = "trivial"  # nu in -2 N_0: Z is constant (trivial zeros of the continuation)

_BRANCH_TOL = 1e-12
_POLE_TOL = 1e-10
_TERM_CUTOFF = 1e-18
_MAX_SHELLS = 80
_CHUNK = 2_000_000  # max elements of the (batch x reciprocal points) work array

TWO_PI = 2.0 * math.pi


def classify_exponent(nu: float, d: int):
    """Return (branch, snapped nu, log index m or None)."""
    if not np.isfinite(nu):
        raise ValueError("exponent must be finite")
    if abs(nu) > 100.0:
        raise ValueError("exponent magnitude above 100 is not supported")
    m = round((nu - d) / 2.0)
    if m >= 0 and abs(nu - (d + 2 * m)) < _BRANCH_TOL:
        return LOG_CASE, float(d + 2 * m), int(m)
    j = round(-nu / 2.0)
    if j >= 0 and abs(nu + 2 * j) < _BRANCH_TOL:
        return TRIVIAL, float(-2 * j), None
    return GENERIC, float(nu), None


def _integer_shell(d: int, r: int) -> np.ndarray:
    """Integer vectors with max-norm exactly r, in lexicographic order."""
    if r == 0:
        return np.zeros((1, d), dtype=np.int64)
    rng = np.arange(-r, r + 1)
    grids = np.meshgrid(*([rng] * d), indexing="ij")
    n = np.stack([g.ravel() for g in grids], axis=-1)
    mask = np.abs(n).max(axis=1) == r
    return n[mask]


def _lex_positive(n: np.ndarray) -> np.ndarray:
    """Rows whose first nonzero entry is positive (one of each +-z pair)."""
    sign = np.zeros(len(n))
    for i in range(n.shape[1]):
        col = n[:, i]
        sign = np.where(sign == 0, np.sign(col), sign)
    return n[sign > 0]


class EpsteinContext:
    """Cached per-(lattice, exponent) evaluation data for the Epstein zeta.

    Construct through :func:`epstein_context`, which memoizes instances.
    """

    def __init__(self, lattice: Lattice, nu: float, splitting: float | None = None):
        self.lattice = lattice
        d = lattice.d
        self.d = d
        self.branch, self.nu, self.log_m = classify_exponent(nu, d)
        self.vol = lattice.volume
        # Split point of the Gaussian integral; balanced so direct and
        # reciprocal sums converge in comparable shell counts.
        self.split = splitting if splitting is not None else self.vol ** (-2.0 / d)
        self._lock = threading.Lock()
        self._taylor_cache: dict[int, RegZetaTaylor] = {}
        if self.branch == TRIVIAL:
            self.const_value = -1.0 if self.nu == 0.0 else 0.0
            return
        nu_ = self.nu
        self.s_rec = (d - nu_) / 2.0  # order of the reciprocal-space gammas
        self.pref = 1.0 / math.gamma(nu_ / 2.0)
        self.rfac = math.pi ** (nu_ - d / 2.0) / self.vol
        self.bconst = -2.0 * (math.pi * self.split) ** (nu_ / 2.0) / nu_
        bz = lattice.brillouin_zone()
        self.kmax = bz.corner_radius
        self._bz = bz
        self._build_direct()
        self._build_reciprocal()

    # -- point-set construction ------------------------------------------------

    def _enumerate_direct(self, poly_order: int, tol: float):
        """Half-lattice points and theta weights; ``poly_order`` widens the
        cutoff for derivative sums that multiply the weights by z^alpha."""
        a = self.lattice.a
        nu, d, t = self.nu, self.d, self.split
        pts, wts = [], []
        total = 1.0
        below = 0
        for r in range(1, _MAX_SHELLS + 1):
            n = _lex_positive(_integer_shell(d, r))
            z = n @ a.T
            r2 = np.einsum("ij,ij->i", z, z)
            x = math.pi * t * r2
            w = upper_gamma(nu / 2.0, x) * r2 ** (-nu / 2.0)
            mag = (np.abs(w) * r2 ** (poly_order / 2.0)).max()
            if mag > tol * total:
                pts.append(z)
                wts.append(w)
                total += np.abs(w).sum()
                below = 0
            else:
                below += 1
                if below >= 2:
                    break
        else:
            raise RuntimeError("direct-space sum did not truncate within shell budget")
        if pts:
            return np.concatenate(pts), np.concatenate(wts)
        return np.zeros((0, d)), np.zeros(0)

    def _build_direct(self):
        self.dir_pts, self.dir_w = self._enumerate_direct(0, _TERM_CUTOFF)

    def _enumerate_reciprocal(self, gamma_order: float, tol: float) -> np.ndarray:
        """Reciprocal points q != 0 whose worst-case term exceeds tol x scale.

        ``gamma_order`` is the largest incomplete-gamma order that will be
        attached to these points; derivative tables shift the order up, which
        slows the decay and requires more shells than plain evaluation.
        """
        b = self.lattice.a_inv_t
        nu, d, t, kmax = self.nu, self.d, self.split, self.kmax
        pts = []
        total = 1.0
        below = 0
        for r in range(1, _MAX_SHELLS + 1):
            n = _integer_shell(d, r)
            q = n @ b.T
            rq = np.linalg.norm(q, axis=1)
            r_low = rq - kmax
            if np.any(r_low <= 0.05):
                mag = np.inf
            else:
                x_low = math.pi * r_low**2 / t
                r_pow = np.where(nu >= d, rq + kmax, r_low)
                bound = np.abs(upper_gamma(gamma_order, x_low)) * r_pow ** (nu - d)
                mag = bound.max()
            if mag > tol * total:
                pts.append(q)
                if np.isfinite(mag):
                    total += mag
                below = 0
            else:
                below += 1
                if below >= 2:
                    break
        else:
            raise RuntimeError("reciprocal-space sum did not truncate within shell budget")
        return np.concatenate(pts) if pts else np.zeros((0, d))

    def _build_reciprocal(self):
        self.rec_pts = self._enumerate_reciprocal(self.s_rec, _TERM_CUTOFF)
        self.rec_norm2 = np.einsum("ij,ij->i", self.rec_pts, self.rec_pts)

    # -- singular part ----------------------------------------------------------

    def singular_coef(self) -> float:
        """Coefficient of the explicit singularity (without the |k| powers)."""
        nu, d = self.nu, self.d
        if self.branch == TRIVIAL:
            return 0.0
        if self.branch == LOG_CASE:
            m = self.log_m
            return (
                math.pi ** (2 * m + d / 2.0)
                / math.gamma(m + d / 2.0)
                * (-1.0) ** (m + 1)
                / math.factorial(m)
            )
        return math.pi ** (nu - d / 2.0) * math.gamma((d - nu) / 2.0) * self.pref

    def singular(self, k) -> np.ndarray:
        """shat(nu, k): the explicit power-law or logarithmic singularity."""
        k = np.atleast_2d(np.asarray(k, dtype=float))
        rho = np.einsum("ij,ij->i", k, k)
        nu, d = self.nu, self.d
        if self.branch == TRIVIAL:
            return np.zeros(len(rho))
        if self.branch == LOG_CASE:
            m = self.log_m
            if np.any(rho == 0.0):
                raise ValueError("singular part undefined at k = 0 in the log case")
            return self.singular_coef() * rho**m * np.log(math.pi * rho)
        if nu < d and np.any(rho == 0.0):
            raise ValueError("singular part diverges at k = 0 for nu < d")
        return self.singular_coef() * rho ** ((nu - d) / 2.0)

    # -- regularized evaluation ---------------------------------------------------

    def _t0_reg(self, rho: np.ndarray) -> np.ndarray:
        """Reciprocal q = 0 term with the singularity removed; entire in |k|^2."""
        t = self.split
        x = math.pi * rho / t
        if self.branch == LOG_CASE:
            m = self.log_m
            head = rho**m * (exp1_plus_log(x) + math.log(t))
            tail = np.zeros_like(rho)
            sign = 1.0
            fac = 1.0
            for j in range(m):
                tail = tail + sign * fac * (t / math.pi) ** (j + 1) * rho ** (m - 1 - j)
                fac *= j + 1.0
                sign = -sign
            return (-1.0) ** m / math.factorial(m) * (head - np.exp(-x) * tail)
        s = self.s_rec
        acc = np.full_like(x, 1.0 / s)
        term = np.ones_like(x)
        for n in range(1, 120):
            term = term * (-x) / n
            contrib = term / (s + n)
            acc = acc + contrib
            if np.all(np.abs(contrib) <= 1e-18 * np.maximum(np.abs(acc), 1.0)):
                break
        return -((math.pi / t) ** s) * acc

    def reg_zeta(self, k) -> np.ndarray:
        """Z_reg(nu, k) on a batch of k points (shape (..., d))."""
        k = np.asarray(k, dtype=float)
        single = k.ndim == 1
        k = np.atleast_2d(k)
        if not np.all(np.isfinite(k)):
            raise ValueError("k contains non-finite entries")
        if self.branch == TRIVIAL:
            out = np.full(len(k), self.const_value)
            return out[0] if single else out
        rho = np.einsum("ij,ij->i", k, k)
        out = np.full(len(k), self.bconst)
        if len(self.dir_pts):
            phase = TWO_PI * (k @ self.dir_pts.T)
            out += 2.0 * (np.cos(phase) @ self.dir_w)
        rec = self._t0_reg(rho)
        if len(self.rec_pts):
            nq = len(self.rec_pts)
            step = max(1, _CHUNK // nq)
            srec = np.empty(len(k))
            for i in range(0, len(k), step):
                y = k[i : i + step, None, :] + self.rec_pts[None, :, :]
                r2 = np.einsum("bqj,bqj->bq", y, y)
                g = upper_gamma(self.s_rec, math.pi * r2 / self.split)
                srec[i : i + step] = np.sum(g * r2 ** ((self.nu - self.d) / 2.0), axis=1)
            rec = rec + srec
        out += self.rfac * rec
        out *= self.pref
        return out[0] if single else out

    def zeta(self, k) -> np.ndarray:
        """Z(nu, k) = Z_reg + shat/V, with the continuation convention at k = 0.

        At k = 0 (more generally k in the reciprocal lattice) the power-law
        singularity is dropped: for nu > d it vanishes there and for nu < d
        this is the value of the continuation in nu.  Exactly at nu = d the
        continuation has its simple pole and a PoleError is raised.
        """
        k = np.asarray(k, dtype=float)
        single = k.ndim == 1
        k = np.atleast_2d(k)
        if not np.all(np.isfinite(k)):
            raise ValueError("k contains non-finite entries")
        if self.branch == TRIVIAL:
            out = np.full(len(k), self.const_value)
            return out[0] if single else out
        kred = self._bz.reduce(k)
        rho = np.einsum("ij,ij->i", kred, kred)
        at_zero = rho < 1e-28
        if np.any(at_zero) and abs(self.nu - self.d) < _POLE_TOL:
            raise PoleError(
                f"Epstein zeta has a simple pole at nu = d = {self.d} for k in the reciprocal lattice"
            )
        out = self.reg_zeta(kred)
        if not np.all(at_zero):
            sing = np.zeros(len(kred))
            sub = kred[~at_zero]
            sing[~at_zero] = self.singular(sub)
            out = out + sing / self.vol
        return out[0] if single else out

    def zeta_at_zero(self) -> float:
        """Z(nu, 0) through the continuation in nu; pole at nu = d."""
        return float(self.zeta(np.zeros(self.d)))

    # -- derivatives of the regularized part at k = 0 ---------------------------

    def _rho_series_coeff(self, n: int) -> float:
        """Taylor coefficient of the q = 0 regularized term in rho = |k|^2."""
        t = self.split
        if self.branch == LOG_CASE:
            m = self.log_m
            val = 0.0
            if n == m:
                val += math.log(t) - np.euler_gamma
            if n > m:
                l = n - m
                val += (-1.0) ** (l + 1) * (math.pi / t) ** l / (l * math.factorial(l))
            acc = 0.0
            for j in range(max(0, m - n - 1), m):
                acc += math.factorial(j) / math.factorial(n - m + j + 1)
            val += (-1.0) ** (n - m) * (math.pi / t) ** (n - m) * acc
            return (-1.0) ** m / math.factorial(m) * val
        s = self.s_rec
        return -((math.pi / t) ** (s + n)) * (-1.0) ** n / (math.factorial(n) * (s + n))

    def reg_derivatives(self, order: int) -> "RegZetaTaylor":
        """All partial derivatives of Z_reg at k = 0 up to total order ``order``.

        Analytic: direct-space terms differentiate the cosine, reciprocal-space
        terms differentiate the Gaussian via Hermite polynomials (shifting the
        incomplete-gamma order), and the q = 0 term uses its entire series.
        """
        if order % 2 != 0:
            raise ValueError("derivative order must be even")
        if order > 12:
            raise ValueError("derivative order above 12 is not supported")
        with self._lock:
            if order in self._taylor_cache:
                return self._taylor_cache[order]
            table = self._build_derivatives(order)
            self._taylor_cache[order] = table
            return table

    def _build_derivatives(self, order: int) -> "RegZetaTaylor":
        d = self.d
        derivs: dict[tuple, float] = {}
        if self.branch == TRIVIAL:
            for total in range(0, order + 1, 2):
                for alpha in _multi_indices(d, total):
                    derivs[alpha] = self.const_value if total == 0 else 0.0
            return RegZetaTaylor(self.lattice, self.nu, order, derivs)
        nu = self.nu
        # Dedicated point sets: z^alpha and the shifted gamma orders amplify
        # edge shells, so the plain evaluation sets are too small here.
        dir_pts, dir_w = self._enumerate_direct(order, _TERM_CUTOFF * 1e-2)
        rec_pts = self._enumerate_reciprocal(self.s_rec + order, _TERM_CUTOFF * 1e-2)
        rec_norm2 = np.einsum("ij,ij->i", rec_pts, rec_pts)
        xq = math.pi * rec_norm2 / self.split
        gam = [upper_gamma(self.s_rec + p, xq) for p in range(order + 1)]
        rq = np.sqrt(rec_norm2)
        for total in range(0, order + 1, 2):
            for alpha in _multi_indices(d, total):
                # The Hermite expansion cancels heavily at high order, so the
                # pieces are combined with exact (fsum) accumulation.
                parts = []
                if len(dir_pts):
                    zpow = np.prod(dir_pts ** np.array(alpha), axis=1)
                    sdir = 2.0 * math.fsum(zpow * dir_w)
                    parts.append((-1.0) ** (total // 2) * TWO_PI**total * sdir)
                if total == 0:
                    parts.append(self.bconst)
                # reciprocal space: Hermite expansion of the Gaussian derivatives
                if len(rec_pts):
                    for jvec in itertools.product(*(range(a // 2 + 1) for a in alpha)):
                        p = total - sum(jvec)
                        coef = 1.0
                        for a_i, j_i in zip(alpha, jvec):
                            coef *= _hermite_coef(a_i, j_i)
                        qpow = np.prod(rec_pts ** (np.array(alpha) - 2 * np.array(jvec)), axis=1)
                        parts.append(
                            self.rfac * coef * math.fsum(qpow * rq ** (nu - d - 2 * p) * gam[p])
                        )
                # q = 0 term: only multi-indices with all-even entries survive
                if all(a % 2 == 0 for a in alpha):
                    n = total // 2
                    mult = math.factorial(n)
                    for a_i in alpha:
                        mult //= math.factorial(a_i // 2)
                    fac = 1.0
                    for a_i in alpha:
                        fac *= math.factorial(a_i)
                    parts.append(self.rfac * self._rho_series_coeff(n) * mult * fac)
                derivs[alpha] = self.pref * math.fsum(parts)
        return RegZetaTaylor(self.lattice, self.nu, order, derivs)


@lru_cache(maxsize=256)
def _hermite_coef(n: int, j: int) -> float:
    """Coefficient of x^(n-2j) in the physicists' Hermite polynomial H_n."""
    return (-1.0) ** j * math.factorial(n) * 2.0 ** (n - 2 * j) / (
        math.factorial(j) * math.factorial(n - 2 * j)
    )


def _multi_indices(d: int, total: int):
    """All d-tuples of nonnegative integers summing to total."""
    if d == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _multi_indices(d - 1, total - head):
            yield (head,) + rest


@dataclass(frozen=True)
class RegZetaTaylor:
    """Partial derivatives of Z_reg at k = 0, up to an even total order."""

    lattice: Lattice
    nu: float
    order: int
    derivs: dict

    def directional_coeff(self, w, k: int):
        """Directional Taylor coefficient (w.grad)^(2k) Z_reg(0) / (2k)!.

        ``w`` may be a single direction or a batch (rows).
        """
        if 2 * k > self.order:
            raise ValueError(f"order {2 * k} exceeds table order {self.order}")
        w = np.asarray(w, dtype=float)
        single = w.ndim == 1
        w = np.atleast_2d(w)
        total = 2 * k
        acc = np.zeros(len(w))
        for alpha in _multi_indices(w.shape[1], total):
            d_alpha = self.derivs[alpha]
            if d_alpha == 0.0:
                continue
            mult = math.factorial(total)
            for a_i in alpha:
                mult //= math.factorial(a_i)
            acc += mult * np.prod(w ** np.array(alpha), axis=1) * d_alpha
        acc /= math.factorial(total)
        return acc[0] if single else acc


@lru_cache(maxsize=4096)
def epstein_context(lattice: Lattice, nu: float, splitting: float | None = None) -> EpsteinContext:
    """Memoized evaluation context for (lattice, exponent)."""
    return EpsteinContext(lattice, float(nu), splitting)


# -- module-level convenience wrappers (the public operation surface) -----------


def epstein_zeta(lattice: Lattice, nu: float, k, reg: bool = False):
    """Epstein zeta Z(nu, k), or its regularized part with ``reg=True``."""
    ctx = epstein_context(lattice, nu)
    return ctx.reg_zeta(k) if reg else ctx.zeta(k)


def singular_part(lattice: Lattice, nu: float, k):
    """Explicit singularity shat(nu, k) of Z near k = 0 (no 1/V factor)."""
    return epstein_context(lattice, nu).singular(k)


def regularized_zeta(lattice: Lattice, nu: float, k):
    """Analytic part Z_reg(nu, k) = Z(nu, k) - shat(nu, k)/V."""
    return epstein_context(lattice, nu).reg_zeta(k)


def reg_zeta_derivatives(lattice: Lattice, nu: float, order: int) -> RegZetaTaylor:
    """Partial derivatives of Z_reg at k = 0 up to even total ``order``."""
    return epstein_context(lattice, nu).reg_derivatives(order)


def directional_taylor_coeff(taylor: RegZetaTaylor, w, k: int):
    """Coefficient of u^(2k) in Z_reg(u w) around u = 0."""
    return taylor.directional_coeff(w, k)
