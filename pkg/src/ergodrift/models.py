"""Model definitions: drift/diffusion pairs and the built-in catalog.

Catalog entries are addressed by string ids such as ``"ou(1)"`` or
``"tanh_drift(1.5,0.5)"`` for drifts and ``"const_sigma(1)"`` or
``"smooth_sigma(1,0.5)"`` for diffusions. Their coefficient functions are
numba-compiled so that the Euler-Maruyama kernel can call them without
leaving compiled code; they also accept numpy arrays.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

__all__ = [
    "ModelTheta",
    "ModelViolationWarning",
    "ModelViolationError",
    "make_model",
    "parse_spec",
    "model_from_spec",
    "DRIFTS",
    "DIFFUSIONS",
]


class ModelViolationWarning(UserWarning):
    """A model left its declared class (e.g. sigma hit zero on a path)."""


class ModelViolationError(ValueError):
    """A model cannot support the requested computation."""


@dataclass(frozen=True)
class ModelTheta:
    """Drift ``S``, its derivative and diffusion ``sigma`` with class constants.

    ``x_star``, ``L`` and ``M`` define the drift class (bounded drift plus
    derivative inside ``|x| <= x_star``, derivative in ``[-L, -1/L]``
    outside), ``sigma_min``/``sigma_max`` bound the diffusion.
    """

    drift: Callable
    drift_derivative: Callable
    diffusion: Callable
    L: float
    M: float
    x_star: float
    sigma_min: float
    sigma_max: float
    spec: str | None = None
    ou_theta: float | None = None
    sigma_const: float | None = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.L > 1:
            raise ValueError(f"L must exceed 1, got {self.L}")
        if not self.M > 0:
            raise ValueError(f"M must be positive, got {self.M}")
        if not (0 < self.sigma_min <= self.sigma_max):
            raise ValueError("need 0 < sigma_min <= sigma_max")

    @property
    def has_exact_sampler(self) -> bool:
        return self.ou_theta is not None and self.sigma_const is not None

    def default_grid(self, n: int = 4096) -> np.ndarray:
        return np.linspace(-3 * self.x_star, 3 * self.x_star, n)

    def class_violations(self, grid=None, x0: float | None = None) -> list[str]:
        """Check the class constraints on ``grid``; return a list of messages."""
        x = self.default_grid() if grid is None else np.asarray(grid, dtype=float)
        s = np.asarray(self.drift(x), dtype=float)
        ds = np.asarray(self.drift_derivative(x), dtype=float)
        sig = np.abs(np.asarray(self.diffusion(x), dtype=float))
        out = []
        if x0 is not None and self.x_star < abs(x0) + 1:
            out.append(f"x_star={self.x_star} < |x0|+1={abs(x0) + 1}")
        inner = np.abs(x) <= self.x_star
        if inner.any():
            worst = float(np.max(np.abs(s[inner]) + np.abs(ds[inner])))
            if worst > self.M * (1 + 1e-12):
                out.append(f"sup |S|+|S'| on |x|<=x_star is {worst:.6g} > M={self.M}")
        outer = ~inner
        if outer.any():
            lo, hi = float(ds[outer].min()), float(ds[outer].max())
            if lo < -self.L * (1 + 1e-12) or hi > -1 / self.L * (1 - 1e-12):
                out.append(
                    f"S' on |x|>=x_star spans [{lo:.6g}, {hi:.6g}], "
                    f"outside [-{self.L}, {-1 / self.L:.6g}]"
                )
        if sig.min() < self.sigma_min * (1 - 1e-12) or sig.max() > self.sigma_max * (1 + 1e-12):
            out.append(
                f"|sigma| spans [{sig.min():.6g}, {sig.max():.6g}], "
                f"outside [{self.sigma_min}, {self.sigma_max}]"
            )
        return out


# -- catalog -----------------------------------------------------------------
# Each factory returns (S, S', extra) with numba-compiled coefficient functions.

def _ou(theta: float):
    if theta <= 0:
        raise ValueError("ou(theta) needs theta > 0")

    @njit
    def drift(x):
        return -theta * x

    @njit
    def ddrift(x):
        return -theta + 0.0 * x

    return drift, ddrift, {"ou_theta": theta}


def _tanh_drift(a: float, b: float):
    """S(x) = b tanh(x) - a x; mean reverting with slope -a in the tails."""
    if a <= 0:
        raise ValueError("tanh_drift(a,b) needs a > 0")

    @njit
    def drift(x):
        return b * np.tanh(x) - a * x

    @njit
    def ddrift(x):
        c = np.cosh(x)
        return b / (c * c) - a

    return drift, ddrift, {}


def _const_sigma(s: float):
    if s <= 0:
        raise ValueError("const_sigma(s) needs s > 0")

    @njit
    def diffusion(x):
        return s + 0.0 * x

    return diffusion, s, s, {"sigma_const": s}


def _smooth_sigma(base: float, amp: float = 0.5):
    """sigma(x) = base + amp / (1 + x^2)."""
    if base <= 0 or amp < 0:
        raise ValueError("smooth_sigma(base, amp) needs base > 0, amp >= 0")

    @njit
    def diffusion(x):
        return base + amp / (1.0 + x * x)

    # sup|sigma'| = amp * 3 sqrt(3) / 8, sup|sigma''| = 2 amp
    smax = max(base + amp, 3 * math.sqrt(3) / 8 * amp, 2 * amp)
    return diffusion, base, smax, {}


DRIFTS = {"ou": _ou, "tanh_drift": _tanh_drift}
DIFFUSIONS = {"const_sigma": _const_sigma, "smooth_sigma": _smooth_sigma}

_SPEC_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def parse_spec(text: str) -> tuple[str, tuple[float, ...]]:
    """Split ``"name(a,b)"`` into ``("name", (a, b))``."""
    m = _SPEC_RE.match(text)
    if not m:
        raise ValueError(f"cannot parse model id {text!r}")
    name, args = m.group(1), m.group(2)
    vals = tuple(float(a) for a in args.split(",")) if args and args.strip() else ()
    return name, vals


def _class_constants(drift, ddrift, x_star: float) -> tuple[float, float]:
    inner = np.linspace(-x_star, x_star, 4097)
    M = float(np.max(np.abs(drift(inner)) + np.abs(ddrift(inner))))
    outer = np.concatenate([
        np.linspace(x_star, 50 * x_star, 4097),
        np.linspace(-50 * x_star, -x_star, 4097),
    ])
    d = ddrift(outer)
    if d.max() >= 0:
        raise ModelViolationError(
            f"drift is not strictly decreasing beyond x_star={x_star}; raise x_star"
        )
    L = max(float(-d.min()), float(-1 / d.max()))
    if L <= 1:
        L = 1.01
    return L, M * (1 + 1e-9)


def make_model(
    drift: str = "ou(1)",
    diffusion: str = "const_sigma(1)",
    x0: float = 0.0,
    x_star: float | None = None,
    L: float | None = None,
    M: float | None = None,
) -> ModelTheta:
    """Build a catalog model.

    Class constants not supplied are derived on a grid: ``x_star`` defaults to
    ``|x0| + 1``, ``M`` to the sup of ``|S| + |S'|`` on ``[-x_star, x_star]``,
    ``L`` to the tightest value compatible with ``S'`` beyond ``x_star``
    (floored at 1.01 so that ``L > 1``).
    """
    dname, dargs = parse_spec(drift)
    sname, sargs = parse_spec(diffusion)
    if dname not in DRIFTS:
        raise ValueError(f"unknown drift {dname!r}; known: {sorted(DRIFTS)}")
    if sname not in DIFFUSIONS:
        raise ValueError(f"unknown diffusion {sname!r}; known: {sorted(DIFFUSIONS)}")
    S, dS, dextra = DRIFTS[dname](*dargs)
    sig, smin, smax, sextra = DIFFUSIONS[sname](*sargs)
    xs = float(abs(x0) + 1) if x_star is None else float(x_star)
    L_auto, M_auto = _class_constants(S, dS, xs)
    spec = f"{drift.strip()}|{diffusion.strip()}|x_star={xs!r}"
    if L is not None:
        spec += f"|L={L!r}"
    if M is not None:
        spec += f"|M={M!r}"
    return ModelTheta(
        drift=S,
        drift_derivative=dS,
        diffusion=sig,
        L=L_auto if L is None else float(L),
        M=M_auto if M is None else float(M),
        x_star=xs,
        sigma_min=smin,
        sigma_max=smax,
        spec=spec,
        ou_theta=dextra.get("ou_theta"),
        sigma_const=sextra.get("sigma_const"),
        params={"drift": drift.strip(), "diffusion": diffusion.strip()},
    )


def model_from_spec(spec: str) -> ModelTheta:
    """Rebuild a catalog model from its ``ModelTheta.spec`` string."""
    parts = spec.split("|")
    if len(parts) < 2:
        raise ValueError(f"bad model spec {spec!r}")
    kw = {}
    for p in parts[2:]:
        k, v = p.split("=", 1)
        kw[k] = float(v)
    return make_model(parts[0], parts[1], **kw)


def warn_violation(msg: str) -> None:
    warnings.warn(msg, ModelViolationWarning, stacklevel=3)
