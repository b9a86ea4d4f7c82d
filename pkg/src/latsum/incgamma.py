"""Upper incomplete gamma function for real order of either sign.

``upper_gamma(s, x)`` evaluates ``Gamma(s, x) = int_x^inf t^(s-1) e^(-t) dt``
for real ``s`` and ``x > 0``, vectorized over ``x``.  Strategy:

* ``s > 0``: scipy's regularized ``Q(s, x)`` times ``Gamma(s)``.
* ``s`` a nonpositive integer ``-m``: finite closed form built on the
  exponential integral ``E_1``.
* other ``s <= 0``, far from an integer: downward recurrence
  ``Gamma(s-1, x) = (Gamma(s, x) - x^(s-1) e^(-x)) / (s - 1)`` anchored at
  the fractional order in ``(0, 1]``.  The subtraction loses relative digits
  at large ``x``, but there the value itself is ``O(e^(-x))`` and the loss is
  absolutely negligible for the lattice sums this module serves.
* other ``s <= 0`` within ``1e-3`` of an integer: Legendre continued
  fraction (modified Lentz), which has no difficulty near integer orders.

Only ``Gamma``/``log Gamma``, ``E_1`` and the regularized ``Q`` are taken
from scipy; everything else is local.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special as sp

_NEAR_INT_TOL = 1e-3
_CF_MAX_ITER = 500
_TINY = 1e-300


def _upper_gamma_cf(s: float, x: np.ndarray) -> np.ndarray:
    """Legendre continued fraction for Gamma(s, x), modified Lentz scheme.

    Valid for any real s when x > 0; efficient once x is not far below |s|.
    """
    b = x + 1.0 - s
    c = np.full_like(x, 1.0 / _TINY)
    d = 1.0 / np.where(np.abs(b) < _TINY, _TINY, b)
    h = d.copy()
    converged = np.zeros(x.shape, dtype=bool)
    for i in range(1, _CF_MAX_ITER + 1):
        an = -i * (i - s)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = b + an / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(converged, h, h * delta)
        converged |= np.abs(delta - 1.0) < 1e-16
        if converged.all():
            break
    return np.exp(-x + s * np.log(x)) * h


def _upper_gamma_nonpos_int(m: int, x: np.ndarray) -> np.ndarray:
    """Gamma(-m, x) for integer m >= 0 via E_1 and a finite sum.

    Gamma(-m, x) = (-1)^m / m! * (E_1(x) - e^(-x) * sum_{j<m} (-1)^j j! / x^(j+1))
    The sum's terms grow with j, so the alternating series is evaluated as
    written; adjacent-term ratios exceed one and no cancellation builds up.
    """
    acc = np.zeros_like(x)
    if m > 0:
        inv = 1.0 / x
        term = inv.copy()  # j! / x^(j+1) at j = 0
        sign = 1.0
        for j in range(m):
            acc = acc + sign * term
            term = term * (j + 1.0) * inv
            sign = -sign
    val = sp.exp1(x) - np.exp(-x) * acc
    return val * ((-1.0) ** m / math.factorial(m))


def _upper_gamma_recurrence(s: float, x: np.ndarray) -> np.ndarray:
    """Downward recurrence from the fractional anchor order in (0, 1]."""
    m = int(math.ceil(-s))
    sigma0 = s + m
    if sigma0 <= 0.0:  # guard against ceil landing exactly on 0
        m += 1
        sigma0 = s + m
    g = sp.gammaincc(sigma0, x) * math.gamma(sigma0)
    if m == 0:
        return g
    emx = np.exp(-x)
    logx = np.log(x)
    sigma = sigma0
    for _ in range(m):
        sigma -= 1.0
        g = (g - np.exp(sigma * logx) * emx) / sigma
    return g


def upper_gamma(s: float, x) -> np.ndarray:
    """Gamma(s, x) for real s, elementwise over x > 0."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if np.any(x <= 0.0) or not np.all(np.isfinite(x)):
        raise ValueError("upper_gamma requires x > 0 and finite")
    if s > 0.0:
        out = sp.gammaincc(s, x) * math.gamma(s)
    else:
        s_round = round(s)
        if abs(s - s_round) < 1e-12:
            out = _upper_gamma_nonpos_int(int(-s_round), x)
        elif abs(s - s_round) < _NEAR_INT_TOL:
            out = _upper_gamma_cf(s, x)
        else:
            out = _upper_gamma_recurrence(s, x)
    return out[0] if scalar else out


def exp1_plus_log(x) -> np.ndarray:
    """E_1(x) + log(x), the entire part of the exponential integral.

    Equal to ``-euler_gamma + sum_{n>=1} (-1)^(n+1) x^n / (n n!)``; computed
    from that series for small x to avoid the cancellation of E_1 against
    the log, and directly otherwise.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    small = x < 1.0
    if np.any(small):
        xs = x[small]
        acc = np.full_like(xs, -np.euler_gamma)
        term = np.ones_like(xs)
        for n in range(1, 40):
            term = term * (-xs) / n
            contrib = -term / n
            acc = acc + contrib
            if np.all(np.abs(contrib) < 1e-18 * (1.0 + np.abs(acc))):
                break
        out[small] = acc
    if np.any(~small):
        xl = x[~small]
        out[~small] = sp.exp1(xl) + np.log(xl)
    return out[0] if scalar else out
