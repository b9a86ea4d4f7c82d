"""Brillouin-zone quadrature for products of Epstein zeta functions.

The target integrals are ``V int_BZ prod_i Z(nu_i, k) dk``.  After exploiting
evenness and mapping the Brillouin zone to the unit cube, the corner
singularity at ``k = 0`` is handled with a Duffy split: the cube corner is cut
into ``d`` pyramids, each mapped to a product of an angular box ``[0,1/2]^(d-1)``
and a radial coordinate ``u in (0, 1/2)``, which turns every integrand factor
into ``Z(u w(v))`` with a direction ``w`` fixed per angular node:

    V int_BZ prod Z dk  =  2^d sum_{signs} sum_{pyramids}
        int_0^(1/2) dv-box u^(d-1) prod_i Z(nu_i, u w) du dv

Angular integrals use tensorized Gauss-Legendre.  The radial integral is
adaptive Gauss-Kronrod when every exponent exceeds the dimension; otherwise
the interval is split at ``epsilon`` and the inner part is integrated
analytically: each factor is its explicit singularity plus a Taylor expansion
of the regularized part, the product is collected as a polynomial in powers
``u^e log^m(pi u^2 w^2)``, and each monomial has a closed-form primitive.
Powers with ``e <= -1`` are assigned their analytic continuation value, which
realizes the meromorphic continuation of the lattice sum; exponent
combinations that land exactly on ``u^-1`` are true poles and raise.

The radial integrator is vector-valued: all angular nodes of a Duffy cell
share one subdivision tree, so the expensive lattice sums evaluate in large
batches.  Refinement decisions depend only on the cell's own nodes, keeping
results bit-identical regardless of how cells are distributed over threads.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .epstein import GENERIC, LOG_CASE, TRIVIAL, epstein_context
from .errors import ConvergenceError, PoleError, TruncationWarning
from .lattice import Lattice

_POLE_TOL = 1e-10
_EXTRA_POWER = 2  # keep collected exponents a little past the Taylor order
_COEF_PRUNE = 1e-20
_MAX_TERMS = 200_000
_MAX_INTERVALS = 60_000

# 15-point Kronrod nodes/weights with the embedded 7-point Gauss rule
# (positive half; symmetric).
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])  # 15 ascending nodes
_WK_FULL = np.concatenate([_WGK[:-1], _WGK[::-1]])
_WG_FULL = np.zeros(15)
_WG_FULL[1:-1:2] = np.concatenate([_WG[:-1], _WG[::-1]])


@dataclass(frozen=True)
class QuadratureConfig:
    """Tuning knobs for the Brillouin-zone quadrature."""

    gauss_order: int = 14
    epsilon: float = 1.0 / 16.0
    taylor_order: int = 8
    adaptive_rel_tol: float = 1e-13
    adaptive_max_depth: int = 40
    force_integral: bool = False
    allow_high_log_power: bool = False
    splitting: float | None = None  # override of the theta-split scale, for testing

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError("epsilon must lie in (0, 1/2)")
        if self.gauss_order < 2:
            raise ValueError("gauss_order must be at least 2")
        if self.taylor_order % 2 != 0 or self.taylor_order < 0:
            raise ValueError("taylor_order must be a nonnegative even integer")

    def to_text(self) -> str:
        pairs = [
            f"gauss_order={self.gauss_order}",
            f"epsilon={self.epsilon!r}",
            f"taylor_order={self.taylor_order}",
            f"adaptive_rel_tol={self.adaptive_rel_tol!r}",
            f"adaptive_max_depth={self.adaptive_max_depth}",
            f"force_integral={self.force_integral}",
            f"allow_high_log_power={self.allow_high_log_power}",
        ]
        return "\n".join(pairs)

    @classmethod
    def from_text(cls, text: str) -> "QuadratureConfig":
        kwargs = {}
        for line in text.replace(",", "\n").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key in ("gauss_order", "taylor_order", "adaptive_max_depth"):
                kwargs[key] = int(value)
            elif key in ("epsilon", "adaptive_rel_tol", "splitting"):
                kwargs[key] = float(value)
            elif key in ("force_integral", "allow_high_log_power"):
                kwargs[key] = value.lower() in ("1", "true", "yes")
            else:
                raise ValueError(f"unknown config key {key!r}")
        return cls(**kwargs)


@dataclass(frozen=True)
class DuffyCell:
    """One sign pattern and pyramid of the Duffy decomposition."""

    signs: tuple
    pyramid: int

    def directions(self, lattice: Lattice, v: np.ndarray) -> np.ndarray:
        """Map angular nodes v (rows in [0,1/2]^(d-1)) to directions w."""
        d = lattice.d
        n = len(v) if v.ndim == 2 else 1
        t = np.empty((max(n, 1), d))
        if d > 1:
            t[:, :-1] = 2.0 * np.asarray(self.signs) * v
        t[:, -1] = 1.0
        t = np.roll(t, self.pyramid, axis=1)
        return t @ lattice.a_inv_t.T


def duffy_cells(d: int):
    """All 2^(d-1) * d cells of the decomposition."""
    cells = []
    for signs in np.ndindex(*([2] * (d - 1))):
        p = tuple(1.0 if s == 0 else -1.0 for s in signs)
        for j in range(d):
            cells.append(DuffyCell(p, j))
    return cells


def angular_nodes(d: int, order: int):
    """Tensor Gauss-Legendre nodes and weights on [0, 1/2]^(d-1)."""
    if d == 1:
        return np.zeros((1, 0)), np.ones(1)
    x, w = np.polynomial.legendre.leggauss(order)
    v1 = (x + 1.0) / 4.0
    w1 = w / 4.0
    grids = np.meshgrid(*([v1] * (d - 1)), indexing="ij")
    v = np.stack([g.ravel() for g in grids], axis=-1)
    wts = np.ones(len(v))
    for axis, g in enumerate(np.meshgrid(*([w1] * (d - 1)), indexing="ij")):
        wts *= g.ravel()
    return v, wts


# -- vector-valued adaptive Gauss-Kronrod ---------------------------------------


def _gk_panel(fvec, a: np.ndarray, b: np.ndarray):
    """Kronrod 15 / Gauss 7 on a batch of intervals; fvec maps (m,) -> (m, W).

    The error estimate follows the classic QUADPACK scaling: the raw
    Kronrod-Gauss difference is damped through the integrand variation and
    floored at the roundoff level of the panel, so noise-limited panels do
    not read as unconverged.
    """
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    u = (mid[:, None] + half[:, None] * _NODES[None, :]).ravel()
    fv = fvec(u)
    w = fv.shape[1]
    fv = fv.reshape(len(a), 15, w)
    ik = np.einsum("n,inw->iw", _WK_FULL, fv) * half[:, None]
    ig = np.einsum("n,inw->iw", _WG_FULL, fv) * half[:, None]
    resabs = np.einsum("n,inw->iw", _WK_FULL, np.abs(fv)) * half[:, None]
    mean = ik / (b - a)[:, None]
    resasc = np.einsum("n,inw->iw", _WK_FULL, np.abs(fv - mean[:, None, :])) * half[:, None]
    raw = np.abs(ik - ig)
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(
            resasc > 0.0,
            resasc * np.minimum(1.0, (200.0 * raw / np.where(resasc > 0, resasc, 1.0)) ** 1.5),
            raw,
        )
    floor = 50.0 * np.finfo(float).eps * resabs
    return ik, np.maximum(scaled, floor), floor


def adaptive_integrate(fvec, a: float, b: float, rtol: float, max_depth: int):
    """Adaptive vector quadrature of fvec over (a, b).

    ``fvec`` maps an ascending node array (m,) to values (m, W); all W
    components share the subdivision tree.  Returns (integral (W,),
    error estimate (W,)).  Never evaluates at the endpoints.
    """
    ints_a = np.array([a])
    ints_b = np.array([b])
    depth = np.array([0])
    vals, errs, floors = _gk_panel(fvec, ints_a, ints_b)
    while True:
        total = vals.sum(axis=0)
        tabs = np.abs(vals).sum(axis=0)
        # the absolute anchor keeps strongly cancelling integrals (the n = 1
        # identity) converging at a realistic absolute accuracy
        target = np.maximum(rtol * np.maximum(np.abs(total), 0.1 * tabs), 1e-300)
        etot = errs.sum(axis=0)
        ftot = floors.sum(axis=0)
        # panels at their roundoff floor cannot improve by splitting
        if np.all(etot <= np.maximum(target, 1.25 * ftot)):
            # exact accumulation: panel sums are the last place where
            # float64 cancellation can erode the converged result
            exact = np.array([math.fsum(vals[:, j]) for j in range(vals.shape[1])])
            return exact, etot
        headroom = np.maximum(errs - floors, 0.0)
        bad = np.max(headroom / target[None, :], axis=1)
        splittable = depth < max_depth
        if not np.any(splittable & (bad > 0.0)):
            raise ConvergenceError(
                f"radial quadrature stalled at depth {max_depth}: error {etot.max():.2e}"
            )
        # refine every interval carrying a meaningful share of the excess
        worst = bad[splittable].max()
        sel = splittable & (bad >= 0.25 * worst) & (bad > 0.0)
        if not np.any(sel):
            sel = splittable & (bad > 0.0)
        idx = np.nonzero(sel)[0]
        mid = 0.5 * (ints_a[idx] + ints_b[idx])
        new_a = np.concatenate([ints_a[idx], mid])
        new_b = np.concatenate([mid, ints_b[idx]])
        new_vals, new_errs, new_floors = _gk_panel(fvec, new_a, new_b)
        keep = ~sel
        ints_a = np.concatenate([ints_a[keep], new_a])
        ints_b = np.concatenate([ints_b[keep], new_b])
        new_depth = np.concatenate([depth[idx] + 1, depth[idx] + 1])
        depth = np.concatenate([depth[keep], new_depth])
        vals = np.concatenate([vals[keep], new_vals])
        errs = np.concatenate([errs[keep], new_errs])
        floors = np.concatenate([floors[keep], new_floors])
        if len(ints_a) > _MAX_INTERVALS:
            raise ConvergenceError("radial quadrature exceeded the interval budget")
        # deterministic canonical order
        order = np.argsort(ints_a, kind="stable")
        ints_a, ints_b = ints_a[order], ints_b[order]
        depth, vals, errs, floors = depth[order], vals[order], errs[order], floors[order]


# -- analytic tail over (0, epsilon) --------------------------------------------


def tail_primitive(nu: float, m: int, eps: float, wsq, allow_high_log_power: bool = False):
    """Continuation value of ``int_0^eps u^(-nu-1) log^m(pi u^2 w^2) du``.

    For ``nu < 0`` these are the classically convergent integrals; for
    ``nu > 0`` the same closed forms give the analytic continuation (the
    divergent boundary power at ``u = 0`` is dropped).  ``nu = 0`` is a true
    logarithmic divergence for every m and raises.  Vectorized over ``wsq``.
    """
    if m < 0:
        raise ValueError("log power must be nonnegative")
    if m > 3 and not allow_high_log_power:
        raise NotImplementedError(
            "log powers above 3 require allow_high_log_power (general recurrence)"
        )
    if abs(nu) < _POLE_TOL:
        raise PoleError(f"tail integral diverges: net power u^-1 with log^{m}")
    wsq = np.asarray(wsq, dtype=float)
    ell = np.log(math.pi * eps * eps * wsq)
    epow = eps ** (-nu)
    acc = -epow / nu * np.ones_like(wsq)
    for j in range(1, m + 1):
        acc = -epow * ell**j / nu + (2.0 * j / nu) * acc
    return acc


def _collect_product_terms(factors, eps, cap_power, w_count):
    """Multiply per-factor (exponent, logpow, coef-array) monomials.

    Returns a dict {(rounded exponent, logpow): coef (W,)} of the product,
    pruned by total u-power and coefficient size.
    """
    acc = {(0.0, 0): np.ones(w_count)}
    for terms in factors:
        nxt: dict = {}
        for (e0, m0), c0 in acc.items():
            for e1, m1, c1 in terms:
                e = round(e0 + e1, 9)
                if e > cap_power:
                    continue
                key = (e, m0 + m1)
                c = c0 * c1
                if key in nxt:
                    nxt[key] += c
                else:
                    nxt[key] = c
        scale = max((np.abs(c).max() for c in nxt.values()), default=0.0)
        acc = {
            key: c for key, c in nxt.items() if np.abs(c).max() > _COEF_PRUNE * scale
        }
        if len(acc) > _MAX_TERMS:
            raise ConvergenceError("tail product expansion exploded; reduce taylor_order")
    return acc


def _tail_terms(contexts, taylors, w: np.ndarray, cfg: QuadratureConfig):
    """Collected monomials of u^(d-1) prod_i (singular_i + Taylor_i) along w.

    Each factor contributes its singular monomial (from the explicit
    singularity of Z, divided by the cell volume) plus the Taylor polynomial
    of its regularized part.  Returns {(exponent above u^(d-1), logpow):
    coefficient array over the rows of w}.
    """
    d = contexts[0].d
    ell = cfg.taylor_order
    wsq = np.einsum("ij,ij->i", w, w)
    factors = []
    for ctx, tab in zip(contexts, taylors):
        terms = []
        if ctx.branch == GENERIC:
            coef = ctx.singular_coef()
            if coef != 0.0:
                c = coef * wsq ** ((ctx.nu - d) / 2.0) / ctx.vol
                terms.append((ctx.nu - d, 0, c))
        elif ctx.branch == LOG_CASE:
            m = ctx.log_m
            c = ctx.singular_coef() * wsq**m / ctx.vol
            terms.append((2.0 * m, 1, c))
        for k in range(0, ell // 2 + 1):
            terms.append((2.0 * k, 0, tab.directional_coeff(w, k)))
        factors.append(terms)
    return _collect_product_terms(factors, cfg.epsilon, ell + _EXTRA_POWER, len(w))


def tail_expansion(contexts, taylors, w: np.ndarray, cfg: QuadratureConfig):
    """Analytic integral of u^(d-1) prod_i Z(nu_i, u w) over (0, epsilon).

    Vectorized over the rows of ``w``; realizes the meromorphic continuation
    through the closed-form primitives.
    """
    d = contexts[0].d
    wsq = np.einsum("ij,ij->i", w, w)
    acc = _tail_terms(contexts, taylors, w, cfg)
    return _integrate_tail(acc, d, wsq, cfg)


def _integrate_tail(acc, d: int, wsq: np.ndarray, cfg: QuadratureConfig):
    eps = cfg.epsilon
    ell = cfg.taylor_order
    total = np.zeros_like(wsq)
    top_band = np.zeros_like(wsq)
    for (e, m), c in sorted(acc.items()):
        eta = d - 1 + e  # total u power of the monomial
        piece = c * tail_primitive(-(eta + 1.0), m, eps, wsq, cfg.allow_high_log_power)
        total += piece
        if e >= ell:
            top_band += np.abs(piece)
    if np.any(top_band > cfg.adaptive_rel_tol * np.maximum(np.abs(total), 1e-300) * 1e3):
        warnings.warn(
            "highest retained Taylor order still contributes noticeably; "
            "increase taylor_order or decrease epsilon",
            TruncationWarning,
            stacklevel=2,
        )
    return total


# -- radial strategy and the full product integral ------------------------------


def _product_on_batch(contexts, k_flat: np.ndarray) -> np.ndarray:
    out = contexts[0].zeta(k_flat)
    for ctx in contexts[1:]:
        out = out * ctx.zeta(k_flat)
    return out


def radial_integrate(contexts, taylors, w: np.ndarray, cfg: QuadratureConfig):
    """Radial integral of u^(d-1) prod_i Z(nu_i, u w) over (0, 1/2) per row of w.

    All exponents above the dimension: one adaptive pass over the whole range.
    Otherwise adaptive on (epsilon, 1/2) plus the analytic tail on
    (0, epsilon), which carries the meromorphic continuation.  The strongly
    growing monomials of the product are removed from the numeric integrand
    and re-added through their elementary primitives; this keeps the
    integrand's dynamic range (and hence the quadrature's roundoff floor)
    of order one even when factors diverge at the origin.
    Returns (values (W,), error estimates (W,)).
    """
    d = contexts[0].d
    w = np.atleast_2d(w)
    wsq = np.einsum("ij,ij->i", w, w)

    def profile(u: np.ndarray) -> np.ndarray:
        k = (u[:, None, None] * w[None, :, :]).reshape(-1, d)
        f = _product_on_batch(contexts, k).reshape(len(u), len(w))
        return f * (u ** (d - 1))[:, None]

    min_nu = min(ctx.nu for ctx in contexts)
    if min_nu > d:
        return adaptive_integrate(profile, 0.0, 0.5, cfg.adaptive_rel_tol, cfg.adaptive_max_depth)
    acc = _tail_terms(contexts, taylors, w, cfg)
    inner = _integrate_tail(acc, d, wsq, cfg)
    subtract = []
    for (e, m), c in sorted(acc.items()):
        eta = d - 1 + e
        if eta >= 0.5 or abs(eta + 1.0) < 1e-8:
            continue
        if m > 3 and not cfg.allow_high_log_power:
            continue
        subtract.append((eta, m, c))

    def profile_flat(u: np.ndarray) -> np.ndarray:
        f = profile(u)
        for eta, m, c in subtract:
            mono = u[:, None] ** eta * c[None, :]
            if m:
                mono = mono * np.log(math.pi * u[:, None] ** 2 * wsq[None, :]) ** m
            f = f - mono
        return f

    outer, err = adaptive_integrate(
        profile_flat, cfg.epsilon, 0.5, cfg.adaptive_rel_tol, cfg.adaptive_max_depth
    )
    for eta, m, c in subtract:
        nu_param = -(eta + 1.0)
        upper = tail_primitive(nu_param, m, 0.5, wsq, cfg.allow_high_log_power)
        lower = tail_primitive(nu_param, m, cfg.epsilon, wsq, cfg.allow_high_log_power)
        outer = outer + c * (upper - lower)
    return outer + inner, err


def integrate_product(
    lattice: Lattice,
    nus,
    cfg: QuadratureConfig | None = None,
    threads: int = 1,
):
    """Duffy-decomposed value of ``V int_BZ prod_i Z(nu_i, k) dk``.

    Returns (value, error_estimate): the estimate aggregates the radial
    quadrature estimates through the angular weights.
    """
    cfg = cfg or QuadratureConfig()
    nus = [float(x) for x in nus]
    d = lattice.d
    contexts = [epstein_context(lattice, nu, cfg.splitting) for nu in nus]
    min_nu = min(ctx.nu for ctx in contexts)
    taylors = None
    if min_nu <= d:
        taylors = [ctx.reg_derivatives(cfg.taylor_order) for ctx in contexts]
    v, wts = angular_nodes(d, cfg.gauss_order)
    cells = duffy_cells(d)

    def cell_value(cell: DuffyCell):
        wdir = cell.directions(lattice, v)
        vals, errs = radial_integrate(contexts, taylors, wdir, cfg)
        return float(wts @ vals), float(wts @ errs)

    if threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(cell_value, cells))
    else:
        results = [cell_value(c) for c in cells]
    scale = 2.0**d
    value = scale * math.fsum(r[0] for r in results)
    err = scale * math.fsum(abs(r[1]) for r in results)
    return value, err


def integrate_bz_even(lattice: Lattice, fvec, cfg: QuadratureConfig | None = None):
    """``V int_BZ f(k) dk`` for an even integrand given as a k-batch callable.

    Uses the same Duffy decomposition with whole-range adaptive radial
    integration; suitable for smooth integrands such as plane waves.
    """
    cfg = cfg or QuadratureConfig()
    d = lattice.d
    v, wts = angular_nodes(d, cfg.gauss_order)
    total = []
    for cell in duffy_cells(d):
        wdir = cell.directions(lattice, v)

        def profile(u: np.ndarray) -> np.ndarray:
            k = (u[:, None, None] * wdir[None, :, :]).reshape(-1, d)
            f = np.asarray(fvec(k), dtype=float).reshape(len(u), len(wdir))
            return f * (u ** (d - 1))[:, None]

        vals, _ = adaptive_integrate(
            profile, 0.0, 0.5, cfg.adaptive_rel_tol, cfg.adaptive_max_depth
        )
        total.append(float(wts @ vals))
    return 2.0**d * math.fsum(total)
