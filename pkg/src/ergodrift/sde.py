"""Discrete observation of scalar diffusions ``dy = S(y) dt + sigma(y) dW``.

Paths are produced chunk by chunk so that very long schedules (tens of
millions of observations) can be consumed without materialising the path;
:func:`simulate_path` simply concatenates the chunks.

Random streams come from numpy's ``PCG64`` seeded through ``SeedSequence``;
replication ``i`` of a Monte Carlo run with master seed ``m`` uses
``SeedSequence(m, spawn_key=(i,))``, so streams are independent and can be
generated in any order or process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numba import njit
from scipy.signal import lfilter

from .models import ModelTheta, warn_violation

__all__ = [
    "GENERATOR_ID",
    "PathSample",
    "PathChunk",
    "n_steps",
    "make_rng",
    "simulate_path",
    "iter_path_chunks",
    "euler_maruyama",
]

GENERATOR_ID = "numpy.PCG64/SeedSequence"
_MASK64 = (1 << 64) - 1
DEFAULT_CHUNK = 1 << 20


def n_steps(T: float, delta: float) -> int:
    """``floor(T / delta)``, tolerant to the last-ulp error of the division."""
    if not delta > 0 or not T > 0:
        raise ValueError(f"need T > 0 and delta > 0, got T={T}, delta={delta}")
    return int(math.floor(T / delta * (1 + 1e-12)))


def make_rng(seed: int, stream: tuple[int, ...] = ()) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=tuple(stream))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class PathSample:
    """Observations ``y_{t_0}, ..., y_{t_N}`` at ``t_j = j * delta``.

    In diagnostic mode the per-step Brownian increments ``W_{t_j} - W_{t_{j-1}}``
    are kept, together with the drift integral ``int S(y_u) du`` and the noise
    integral ``int sigma(y_u) dW_u`` over each step, so that
    ``y_{t_j} - y_{t_{j-1}} = drift_integrals[j-1] + noise_integrals[j-1]``.
    """

    delta: float
    values: np.ndarray
    seed: int
    generator_id: str = GENERATOR_ID
    stream: tuple[int, ...] = ()
    brownian_increments: np.ndarray | None = None
    drift_integrals: np.ndarray | None = None
    noise_integrals: np.ndarray | None = None
    wiener_terminal: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.values) - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.delta

    @property
    def diagnostic(self) -> bool:
        return self.brownian_increments is not None

    def chunks(self, size: int = DEFAULT_CHUNK) -> Iterator["PathChunk"]:
        """Re-chunk a stored path in the same layout the simulator streams."""
        n = len(self.values)
        for start in range(0, n, size):
            stop = min(start + size, n)
            lo, hi = max(start - 1, 0), stop - 1
            yield PathChunk(
                start=start,
                values=self.values[start:stop],
                brownian_increments=None if self.brownian_increments is None
                else self.brownian_increments[lo:hi],
                drift_integrals=None if self.drift_integrals is None
                else self.drift_integrals[lo:hi],
                noise_integrals=None if self.noise_integrals is None
                else self.noise_integrals[lo:hi],
            )


@dataclass
class PathChunk:
    """Values with global indices ``start .. start+len(values)-1``.

    Step arrays (increments, integrals) cover the steps ending at those
    indices, so they are one shorter than ``values`` in the first chunk.
    """

    start: int
    values: np.ndarray
    brownian_increments: np.ndarray | None = None
    drift_integrals: np.ndarray | None = None
    noise_integrals: np.ndarray | None = None


# -- exact Ornstein-Uhlenbeck transitions -------------------------------------

class _OUExact:
    def __init__(self, theta, sigma, dt, record):
        self.sigma = sigma
        self.record = record
        x = theta * dt
        self.a = math.exp(-x)
        var = sigma * sigma * (-math.expm1(-2 * x)) / (2 * theta)
        self.sd = math.sqrt(var)
        self.sqdt = math.sqrt(dt)
        # Joint law of (increment of W, stochastic convolution) over one step.
        self.c = sigma * (-math.expm1(-x)) / (theta * dt)
        self.d = math.sqrt(max(var - self.c * self.c * dt, 0.0))

    def steps(self, rng, y, n):
        a = self.a
        if not self.record:
            z = rng.standard_normal(n)
            z *= self.sd
            out = lfilter([1.0], [1.0, -a], z, zi=[a * y])[0]
            return out, None, None, None
        z = rng.standard_normal((n, 2))
        dw = z[:, 0] * self.sqdt
        eps = self.c * dw + self.d * z[:, 1]
        out = lfilter([1.0], [1.0, -a], eps, zi=[a * y])[0]
        noise = self.sigma * dw
        prev = np.empty(n)
        prev[0] = y
        prev[1:] = out[:-1]
        drift = (out - prev) - noise
        return out, dw, drift, noise


# -- Euler-Maruyama on a refined grid -------------------------------------------

_KERNELS: dict = {}


def _euler_kernel(drift, diffusion):
    key = (id(drift), id(diffusion))
    k = _KERNELS.get(key)
    if k is not None:
        return k[0]

    @njit
    def kernel(y, z, dt, substeps, out, dw_out, drift_out, noise_out, record):
        sq = math.sqrt(dt)
        n = out.shape[0]
        zero_sigma = False
        for i in range(n):
            dw_sum = 0.0
            d_sum = 0.0
            s_sum = 0.0
            for k in range(substeps):
                dw = sq * z[i * substeps + k]
                a = drift(y) * dt
                s = diffusion(y)
                if s == 0.0:
                    zero_sigma = True
                b = s * dw
                y = y + a + b
                if record:
                    dw_sum += dw
                    d_sum += a
                    s_sum += b
            out[i] = y
            if record:
                dw_out[i] = dw_sum
                drift_out[i] = d_sum
                noise_out[i] = s_sum
        return zero_sigma

    _KERNELS[key] = (kernel, drift, diffusion)
    return kernel


def _is_jitted(f) -> bool:
    return hasattr(f, "py_func") and hasattr(f, "signatures")


def _python_kernel(drift, diffusion):
    def kernel(y, z, dt, substeps, out, dw_out, drift_out, noise_out, record):
        sq = math.sqrt(dt)
        zero_sigma = False
        for i in range(out.shape[0]):
            dw_sum = d_sum = s_sum = 0.0
            for k in range(substeps):
                dw = sq * z[i * substeps + k]
                a = float(drift(y)) * dt
                s = float(diffusion(y))
                zero_sigma |= s == 0.0
                b = s * dw
                y = y + a + b
                dw_sum += dw
                d_sum += a
                s_sum += b
            out[i] = y
            if record:
                dw_out[i], drift_out[i], noise_out[i] = dw_sum, d_sum, s_sum
        return zero_sigma
    return kernel


class _Euler:
    def __init__(self, model, dt, substeps, record):
        self.model = model
        self.substeps = int(substeps)
        self.dt_sub = dt / self.substeps
        self.record = record
        if _is_jitted(model.drift) and _is_jitted(model.diffusion):
            self.kernel = _euler_kernel(model.drift, model.diffusion)
        else:
            self.kernel = _python_kernel(model.drift, model.diffusion)

    def steps(self, rng, y, n):
        z = rng.standard_normal(n * self.substeps)
        out = np.empty(n)
        if self.record:
            dw, dr, no = np.empty(n), np.empty(n), np.empty(n)
        else:
            dw = dr = no = np.empty(0)
        zero = self.kernel(float(y), z, self.dt_sub, self.substeps, out, dw, dr, no, self.record)
        if zero and self.record:
            warn_violation("sigma evaluated to 0 on the simulated path")
        if not self.record:
            return out, None, None, None
        return out, dw, dr, no


def euler_maruyama(model: ModelTheta, y0: float, dW: np.ndarray, dt: float) -> np.ndarray:
    """Plain Euler-Maruyama driven by the given increments; returns all states."""
    dW = np.asarray(dW, dtype=float)
    z = dW / math.sqrt(dt)
    out = np.empty(len(dW))
    e = _Euler(model, dt, 1, False)
    e.kernel(float(y0), z, dt, 1, out, np.empty(0), np.empty(0), np.empty(0), False)
    return np.concatenate([[y0], out])


def _stepper(model, delta, substeps, record, method):
    if method == "auto":
        method = "exact" if model.has_exact_sampler else "euler"
    if method == "exact":
        if not model.has_exact_sampler:
            raise ValueError("exact sampling is only available for ou(theta)|const_sigma(s)")
        return _OUExact(model.ou_theta, model.sigma_const, delta, record), "ou-exact"
    if method == "euler":
        if substeps < 1:
            raise ValueError("substeps must be >= 1")
        return _Euler(model, delta, substeps, record), f"euler/{int(substeps)}"
    raise ValueError(f"unknown method {method!r}")


def iter_path_chunks(
    model: ModelTheta,
    T: float,
    delta: float,
    substeps: int = 16,
    seed: int = 0,
    record_brownian: bool = False,
    y0: float = 0.0,
    burn_in: float = 0.0,
    stream: tuple[int, ...] = (),
    chunk_size: int = DEFAULT_CHUNK,
    method: str = "auto",
) -> Iterator[PathChunk]:
    """Stream a path as :class:`PathChunk` objects (see :func:`simulate_path`)."""
    if not (delta > 0) or not (T >= delta):
        raise ValueError(f"need delta > 0 and T >= delta, got T={T}, delta={delta}")
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    N = n_steps(T, delta)
    rng = make_rng(seed, stream)
    step, _ = _stepper(model, delta, substeps, record_brownian, method)
    y = float(y0)
    nb = int(math.ceil(burn_in / delta - 1e-9)) if burn_in > 0 else 0
    while nb > 0:
        k = min(nb, chunk_size)
        out = step.steps(rng, y, k)[0]
        y = float(out[-1])
        nb -= k
    w = 0.0
    first = True
    done = 0
    while done < N or first:
        k = min(N - done, chunk_size - (1 if first else 0))
        if k > 0:
            out, dw, dr, no = step.steps(rng, y, k)
        else:
            out = np.empty(0)
            dw = dr = no = np.empty(0) if record_brownian else None
        vals = np.concatenate([[y], out]) if first else out
        if record_brownian:
            w = float(np.cumsum(np.concatenate([[w], dw]))[-1]) if len(dw) else w
        yield PathChunk(
            start=0 if first else done + 1,
            values=vals,
            brownian_increments=dw,
            drift_integrals=dr,
            noise_integrals=no,
        )
        if len(out):
            y = float(out[-1])
        done += k
        first = False
    iter_path_chunks.last_wiener = w  # type: ignore[attr-defined]


def simulate_path(
    model: ModelTheta,
    T: float,
    delta: float,
    substeps: int = 16,
    seed: int = 0,
    record_brownian: bool = False,
    y0: float = 0.0,
    burn_in: float = 0.0,
    stream: tuple[int, ...] = (),
    method: str = "auto",
) -> PathSample:
    """Observe the diffusion at ``t_j = j * delta``, ``j = 0 .. floor(T/delta)``.

    Models with an exact transition law (``ou(theta)`` with constant sigma)
    use it; everything else runs Euler-Maruyama with ``substeps`` sub-steps
    per observation interval and reports only the coarse grid. ``burn_in``
    time units are simulated and discarded before ``y_{t_0}``.

    The output is a pure function of the arguments.
    """
    _, label = _stepper(model, delta, substeps, record_brownian, method)
    chunks = list(iter_path_chunks(
        model, T, delta, substeps, seed, record_brownian, y0, burn_in, stream, method=method,
    ))
    values = np.concatenate([c.values for c in chunks])
    kw = {}
    if record_brownian:
        kw = dict(
            brownian_increments=np.concatenate([c.brownian_increments for c in chunks]),
            drift_integrals=np.concatenate([c.drift_integrals for c in chunks]),
            noise_integrals=np.concatenate([c.noise_integrals for c in chunks]),
            wiener_terminal=iter_path_chunks.last_wiener,  # type: ignore[attr-defined]
        )
    return PathSample(
        delta=float(delta),
        values=values,
        seed=int(seed),
        stream=tuple(stream),
        meta={
            "model": model.spec,
            "method": label,
            "y0": float(y0),
            "burn_in": float(burn_in),
            "T": float(T),
        },
        **kw,
    )
