"""Invariant density, ergodic means and moment/deviation quantities.

For a drift/diffusion pair in the class, the stationary density is

    q(x) = sigma(x)^-2 exp(Stilde(x)) / Z,   Stilde(x) = 2 int_0^x S(v)/sigma(v)^2 dv,

with ``Z`` the normalising integral. ``Stilde`` is tabulated once per model
by cell-wise Gauss-Legendre on a dense grid and interpolated with cubic
Hermite splines (its derivative ``2 S / sigma^2`` is known in closed form).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .models import ModelTheta, ModelViolationError
from .quadrature import cell_gauss
from .sde import PathSample

__all__ = [
    "InvariantDensity",
    "MomentBoundConstants",
    "density_oracle",
    "invariant_density",
    "ergodic_mean",
    "window_indicator",
    "moment_bound",
    "moment_constants",
    "deviation_statistic",
]


def _vec(f):
    def g(x):
        x = np.asarray(x, dtype=float)
        try:
            out = np.asarray(f(x), dtype=float)
            if out.shape == x.shape:
                return out
        except Exception:
            pass
        return np.vectorize(lambda v: float(f(v)), otypes=[float])(x)
    return g


class InvariantDensity:
    """Tabulated stationary density of a class model.

    Parameters
    ----------
    model : ModelTheta
    tol : float
        Target accuracy for ``q`` and its normalisation.
    domain_cut : float, optional
        Initial truncation radius; defaults to ``x_star + 25 L`` and is doubled
        until the normaliser is stable to ``1e-10`` relative.
    cell : float
        Grid spacing of the ``Stilde`` table.
    """

    max_doublings = 4

    def __init__(self, model: ModelTheta, tol: float = 1e-10, domain_cut: float | None = None,
                 cell: float = 0.01):
        self.model = model
        self.tol = tol
        self.cell = cell
        self._S = _vec(model.drift)
        self._sig = _vec(model.diffusion)
        cut = model.x_star + 25 * model.L if domain_cut is None else float(domain_cut)
        logz = self._build(cut)
        for _ in range(self.max_doublings):
            prev = logz
            saved = self.__dict__.copy()
            logz = self._build(2 * cut)
            if abs(math.expm1(logz - prev)) <= 1e-10:
                self.__dict__.update(saved)  # keep the smaller, already-stable table
                logz = prev
                break
            cut *= 2
        else:
            raise ModelViolationError(
                f"normaliser does not stabilise up to domain_cut={cut}; "
                "the invariant density tail is not integrable"
            )

    def _ratio(self, x):
        s = self._sig(x)
        return 2 * self._S(x) / (s * s)

    def _build(self, cut: float) -> float:
        n = int(math.ceil(cut / self.cell))
        half = np.linspace(0.0, n * self.cell, n + 1)
        edges = np.concatenate([-half[:0:-1], half])
        inc = cell_gauss(self._ratio, edges, order=10)
        inc20 = cell_gauss(self._ratio, edges, order=20)
        if np.max(np.abs(inc - inc20)) > self.tol:
            raise ModelViolationError("drift/diffusion ratio too rough for the Stilde grid")
        st = np.empty(len(edges))
        st[n] = 0.0
        st[n + 1:] = np.cumsum(inc20[n:])
        st[:n] = -np.cumsum(inc20[:n][::-1])[::-1]
        self.domain_cut = float(edges[-1])
        self.edges = edges
        self._stilde = CubicHermiteSpline(edges, st, self._ratio(edges))
        self._shift = float(st.max())
        body = cell_gauss(self._unnormalised, edges, order=20)
        if not np.all(np.isfinite(body)):
            raise ModelViolationError("invariant density is not finite on the grid")
        self.log_normalizer = math.log(math.fsum(body)) + self._shift
        return self.log_normalizer

    def _unnormalised(self, x):
        s = self._sig(x)
        return np.exp(self._stilde(x) - self._shift) / (s * s)

    @property
    def normalizer(self) -> float:
        """``Z = int sigma^-2 exp(Stilde)``; may overflow to ``inf`` for steep drifts."""
        try:
            return math.exp(self.log_normalizer)
        except OverflowError:
            return math.inf

    def stilde(self, x):
        return self._stilde(x)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(x) > self.domain_cut):
            raise ValueError(f"|x| exceeds domain_cut={self.domain_cut}")
        s = self._sig(x)
        out = np.exp(self._stilde(x) - self.log_normalizer) / (s * s)
        return out if out.ndim else float(out)

    def mean(self, f, points=(), order: int = 20) -> float:
        """``int f q dx`` over the tabulated domain, with ``points`` as extra cell edges."""
        fv = _vec(f)
        edges = self.edges
        pts = np.asarray([p for p in points if -self.domain_cut < p < self.domain_cut], dtype=float)
        if len(pts):
            edges = np.unique(np.concatenate([edges, pts]))
        ends = np.array([edges[0], edges[-1]])
        tail = np.abs(fv(ends)) * self(ends)
        if not np.all(np.isfinite(tail)) or tail.max() > self.tol:
            raise ModelViolationError("f * q does not decay at the domain cut; mean may diverge")
        vals = cell_gauss(lambda x: fv(x) * self(x), edges, order=order)
        return math.fsum(vals)

    def total_mass(self) -> float:
        return self.mean(lambda x: np.ones_like(x))


_CACHE: dict = {}


def density_oracle(model: ModelTheta, tol: float = 1e-10, domain_cut: float | None = None
                   ) -> InvariantDensity:
    """Cached :class:`InvariantDensity` for ``model``."""
    key = (model, tol, domain_cut)
    dens = _CACHE.get(key)
    if dens is None:
        dens = _CACHE[key] = InvariantDensity(model, tol=tol, domain_cut=domain_cut)
    return dens


def invariant_density(model: ModelTheta, x, tol: float = 1e-10, domain_cut: float | None = None):
    """Stationary density ``q(x)`` of ``model``."""
    return density_oracle(model, tol, domain_cut)(x)


def ergodic_mean(model: ModelTheta, f, tol: float = 1e-10, points=()) -> float:
    """Stationary mean ``int f(x) q(x) dx``; pass jump locations of ``f`` in ``points``."""
    return density_oracle(model, tol).mean(f, points=points)


def window_indicator(x0: float, h: float):
    """``chi(y) = 1(|y - x0| <= h)`` with its jump points attached."""
    def chi(y):
        return (np.abs(np.asarray(y, dtype=float) - x0) <= h).astype(float)
    chi.points = (x0 - h, x0 + h)
    return chi


@dataclass(frozen=True)
class MomentBoundConstants:
    D_star: float
    L: float
    sigma_max: float

    def A(self, m: int, z: float) -> float:
        """``(2m-1)!! (D* L + z^2)^m``: bound on ``sup_t E_z y_t^{2m}``."""
        return _double_factorial(2 * m - 1) * (self.D_star * self.L + z * z) ** m

    def B_star(self, m: int, z: float) -> float:
        return self.A(m, z) * (self.D_star + 2 * (m - 1) * self.sigma_max ** 2)

    def B1_star(self, m: int, z: float) -> float:
        return 1 + m * self.B_star(m + 1, z)


def _double_factorial(k: int) -> int:
    return math.prod(range(k, 0, -2)) if k > 0 else 1


def moment_constants(model: ModelTheta) -> MomentBoundConstants:
    L, M, xs = model.L, model.M, model.x_star
    d_star = (M + L * xs + 2 * xs) ** 2 * (L + M) + model.sigma_max ** 2
    return MomentBoundConstants(D_star=d_star, L=L, sigma_max=model.sigma_max)


def moment_bound(model: ModelTheta, m: int, z: float) -> float:
    """Uniform-in-time bound ``(2m-1)!! (D* L + z^2)^m`` on ``E_z y_t^{2m}``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return moment_constants(model).A(m, z)


def deviation_statistic(path: PathSample, model: ModelTheta, f, n: int | None = None,
                        points=None, centre: float | None = None) -> float:
    """``D_n(f) = sum_{k=1}^{n} (f(y_{t_k}) - m(f))`` with the stationary mean as centre."""
    N = path.N
    n = N if n is None else int(n)
    if not 0 <= n <= N:
        raise ValueError(f"n={n} outside [0, {N}]")
    if centre is None:
        pts = getattr(f, "points", ()) if points is None else points
        centre = ergodic_mean(model, f, points=pts)
    vals = np.asarray(f(np.asarray(path.values[1:n + 1])), dtype=float)
    return math.fsum(vals) - n * centre
