"""Quadrature helpers.

``adaptive_simpson`` is the general-purpose integrator for scalar callables on
compact intervals. ``cell_gauss`` integrates a vectorised integrand over every
cell of a grid at once and is used for cumulative integrals on dense grids.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["QuadratureError", "adaptive_simpson", "adaptive_gauss", "cell_gauss", "gauss_nodes"]


class QuadratureError(ArithmeticError):
    pass


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-9, max_depth: int = 50,
                     points=()) -> float:
    """Integrate ``f`` over ``[a, b]`` to absolute tolerance ``tol``.

    Uses the Richardson-corrected Simpson rule with interval bisection.
    ``points`` are interior breakpoints (kinks, jumps) that are always used
    as interval ends. Raises :class:`QuadratureError` on non-finite values
    or when ``max_depth`` is exhausted.
    """
    if a == b:
        return 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    cuts = sorted({a, b, *(p for p in points if a < p < b)})
    pieces = len(cuts) - 1
    total = math.fsum(
        _simpson_interval(f, lo, hi, tol / pieces, max_depth)
        for lo, hi in zip(cuts[:-1], cuts[1:])
    )
    return sign * total


def _eval(f, x):
    v = float(f(x))
    if not math.isfinite(v):
        raise QuadratureError(f"integrand is not finite at x={x!r}")
    return v


def _simpson_interval(f, a, b, tol, max_depth):
    fa, fb = _eval(f, a), _eval(f, b)
    m = 0.5 * (a + b)
    fm = _eval(f, m)
    whole = (b - a) * (fa + 4 * fm + fb) / 6
    parts = []
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        a, b, fa, fm, fb, whole, eps, depth = stack.pop()
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = _eval(f, lm), _eval(f, rm)
        left = (m - a) * (fa + 4 * flm + fm) / 6
        right = (b - m) * (fm + 4 * frm + fb) / 6
        err = left + right - whole
        if abs(err) <= 15 * eps or (b - a) < 1e-15 * max(1.0, abs(a)):
            parts.append(left + right + err / 15)
        elif depth >= max_depth:
            raise QuadratureError(f"adaptive Simpson did not converge on [{a}, {b}]")
        else:
            stack.append((a, m, fa, flm, fm, left, eps / 2, depth + 1))
            stack.append((m, b, fm, frm, fb, right, eps / 2, depth + 1))
    return math.fsum(parts)


_GAUSS: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def adaptive_gauss(f, a: float, b: float, tol: float = 1e-12, max_depth: int = 30) -> float:
    """Integrate vectorised ``f`` on ``[a, b]`` by 10/20-point Gauss-Legendre.

    An interval is accepted when the two rules agree to ``tol`` (scaled to
    its share of the range) and bisected otherwise.
    """
    x10, w10 = gauss_nodes(10)
    x20, w20 = gauss_nodes(20)
    parts = []
    stack = [(float(a), float(b), 0)]
    span = abs(b - a) or 1.0
    while stack:
        lo, hi, depth = stack.pop()
        half, mid = 0.5 * (hi - lo), 0.5 * (hi + lo)
        v10 = half * float(np.dot(w10, f(mid + half * x10)))
        v20 = half * float(np.dot(w20, f(mid + half * x20)))
        if not (math.isfinite(v10) and math.isfinite(v20)):
            raise QuadratureError(f"integrand is not finite on [{lo}, {hi}]")
        if abs(v20 - v10) <= tol * (hi - lo) / span:
            parts.append(v20)
        elif depth >= max_depth:
            raise QuadratureError(f"adaptive Gauss did not converge on [{lo}, {hi}]")
        else:
            stack.append((lo, mid, depth + 1))
            stack.append((mid, hi, depth + 1))
    return math.fsum(parts)


def gauss_nodes(order: int):
    if order not in _GAUSS:
        _GAUSS[order] = np.polynomial.legendre.leggauss(order)
    return _GAUSS[order]


def cell_gauss(f, edges: np.ndarray, order: int = 10) -> np.ndarray:
    """Integral of vectorised ``f`` over each cell ``[edges[i], edges[i+1]]``."""
    edges = np.asarray(edges, dtype=float)
    x, w = gauss_nodes(order)
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    pts = mid[:, None] + half[:, None] * x[None, :]
    vals = np.asarray(f(pts.ravel()), dtype=float).reshape(pts.shape)
    if not np.all(np.isfinite(vals)):
        raise QuadratureError("integrand is not finite on the grid")
    return half * (vals @ w)
