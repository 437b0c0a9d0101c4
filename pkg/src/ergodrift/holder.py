"""Weak Hoelder modulus at a point and the local perturbation family.

The modulus of ``S`` at ``x0`` with window ``h`` is

    Omega(S) = int_{-1}^{1} (S(x0 + h z) - S(x0)) dz,

which only sees the part of ``S`` that is even about ``x0``. The perturbation
family adds a bump ``(u / phi) * V((x - x0) / h)`` whose modulus vanishes
identically, so it moves ``S(x0)`` without leaving the class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .quadrature import adaptive_gauss, adaptive_simpson

__all__ = [
    "HolderParams",
    "HolderWitness",
    "PerturbationFamily",
    "omega_modulus",
    "omega_modulus_derivative_form",
    "weak_holder_membership",
    "bump_density",
    "perturbation_profile",
    "build_perturbation",
]

DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class HolderParams:
    x0: float
    h: float
    beta: float
    epsilon: float

    def __post_init__(self):
        if not 1 < self.beta < 2:
            raise ValueError(f"beta must lie in (1, 2), got {self.beta}")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class HolderWitness:
    member: bool
    modulus: float
    bound: float
    derivative_form: float | None = None
    by_h: tuple = ()

    def __bool__(self):
        return self.member


def omega_modulus(S: Callable, x0: float, h: float, quad_tol: float = DEFAULT_TOL,
                  breakpoints=()) -> float:
    """``int_{-1}^{1} (S(x0 + h z) - S(x0)) dz`` by adaptive Simpson.

    ``breakpoints`` are points (in x units) where ``S`` is not smooth.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    s0 = float(S(x0))
    if not math.isfinite(s0):
        raise ArithmeticError(f"S({x0}) is not finite")
    pts = [(p - x0) / h for p in breakpoints]
    return adaptive_simpson(lambda z: S(x0 + h * z) - s0, -1.0, 1.0, quad_tol, points=pts)


def omega_modulus_derivative_form(dS: Callable, x0: float, h: float,
                                  quad_tol: float = DEFAULT_TOL) -> float:
    """The same quantity from the derivative, as a double integral.

    ``h * int_{-1}^{1} z int_0^1 (S'(x0 + u z h) - S'(x0)) du dz``; the factor
    ``h`` converts to the units of :func:`omega_modulus`.
    """
    d0 = float(dS(x0))

    def inner(z):
        if z == 0.0:
            return 0.0
        return z * adaptive_simpson(lambda u: dS(x0 + u * z * h) - d0, 0.0, 1.0, quad_tol)

    return h * adaptive_simpson(inner, -1.0, 1.0, quad_tol)


def weak_holder_membership(S: Callable, params: HolderParams, grid=None,
                           derivative: Callable | None = None,
                           quad_tol: float = DEFAULT_TOL) -> HolderWitness:
    """Check ``|Omega_{x0,h}(S)| <= epsilon * h**beta``.

    ``grid`` is an optional sequence of bandwidths to check in addition to
    ``params.h``; membership requires the inequality at all of them. The
    witness reports the modulus at ``params.h``.
    """
    hs = [params.h] + ([float(v) for v in grid] if grid is not None else [])
    rows = []
    for h in hs:
        om = omega_modulus(S, params.x0, h, quad_tol)
        rows.append((h, om, params.epsilon * h ** params.beta))
    dform = None
    if derivative is not None:
        dform = omega_modulus_derivative_form(derivative, params.x0, params.h, quad_tol)
    _, om, bound = rows[0]
    return HolderWitness(
        member=all(abs(m) <= b for _, m, b in rows),
        modulus=om,
        bound=bound,
        derivative_form=dform,
        by_h=tuple(rows),
    )


def bump_density(x):
    """``(15/16) (1 - x^2)^2`` on ``[-1, 1]``, zero outside; C^1 with unit mass."""
    x = np.asarray(x, dtype=float)
    out = np.where(np.abs(x) <= 1, 15.0 / 16.0 * (1 - x * x) ** 2, 0.0)
    return out if out.ndim else float(out)


def perturbation_profile(nu: float, g: Callable = bump_density, quad_tol: float = 1e-12):
    """The profile ``V_nu`` as a scalar-or-array callable.

    ``V_nu(x) = (1/nu) int F(u) g((u - x)/nu) du`` with the step function
    ``F = 1 on |u| <= 1-2nu, 2 on 1-2nu <= |u| <= 1-nu, 0 elsewhere``.
    Substituting ``u = x + nu s`` gives ``int_{-1}^{1} F(x + nu s) g(s) ds``,
    which is integrated piecewise between the jumps of ``F``.
    """
    if not 0 < nu < 0.25:
        raise ValueError(f"nu must lie in (0, 1/4), got {nu}")
    a, b = 1 - 2 * nu, 1 - nu

    def F(u):
        au = abs(u)
        if au <= a:
            return 1.0
        if au <= b:
            return 2.0
        return 0.0

    def V_scalar(x):
        x = float(x)
        cuts = sorted({-1.0, 1.0, *(
            s for s in ((c - x) / nu for c in (-b, -a, a, b)) if -1 < s < 1
        )})
        total = 0.0
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            level = F(x + nu * 0.5 * (lo + hi))
            if level:
                total += level * adaptive_gauss(g, lo, hi, quad_tol)
        return total

    def V(x):
        if np.ndim(x) == 0:
            return V_scalar(x)
        return np.vectorize(V_scalar, otypes=[float])(x)

    V.breakpoints = tuple(sorted({s * c + e * nu for c in (a, b) for s in (-1, 1) for e in (-1, 1)}))
    V.nu = nu
    return V


@dataclass(frozen=True)
class PerturbationFamily:
    """``S_{u,nu}(x) = S0(x) + (u / phi_T) V_nu((x - x0) / h)``."""

    base_drift: Callable
    nu: float
    u: float
    h: float
    x0: float
    phi_T: float
    g: Callable = bump_density

    def __post_init__(self):
        if not 0 < self.nu < 0.25:
            raise ValueError(f"nu must lie in (0, 1/4), got {self.nu}")
        if not self.h > 0 or not self.phi_T > 0:
            raise ValueError("h and phi_T must be positive")

    @property
    def breakpoints(self) -> tuple:
        """Points (x units) where the added bump is not C^infinity."""
        V = perturbation_profile(self.nu, self.g)
        return tuple(self.x0 + self.h * p for p in V.breakpoints)


def build_perturbation(fam: PerturbationFamily) -> Callable:
    """Return the perturbed drift ``S_{u,nu}`` (accepts scalars and arrays)."""
    S0 = fam.base_drift
    if fam.u == 0:
        return S0
    V = perturbation_profile(fam.nu, fam.g)
    scale = fam.u / fam.phi_T

    def S(x):
        return S0(x) + scale * V((np.asarray(x, dtype=float) - fam.x0) / fam.h)

    S.family = fam
    S.profile = V
    return S
