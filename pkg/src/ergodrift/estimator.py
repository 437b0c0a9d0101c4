"""Truncated sequential kernel estimator of the drift at a point.

The procedure, for observations ``y_{t_0}, ..., y_{t_N}``:

1. estimate the stationary density at ``x0`` from the first ``N0`` values
   with an indicator kernel of half-width ``varsigma``;
2. clip it to ``[sqrt(upsilon), 1/sqrt(upsilon)]``;
3. set the threshold ``H = h (N - N0) (2 q_tilde - upsilon)``;
4. accumulate window hits ``chi_j = 1(|y_{t_{j-1}} - x0| <= h)`` from
   ``j = N0`` until they reach ``H`` (stopping index ``varpi``), giving the
   crossing observation the fractional weight ``kappa`` so that the
   weighted hit count equals ``H`` exactly;
5. return ``sum_j w_j chi_j (y_{t_j} - y_{t_{j-1}}) / (delta H)`` when the
   crossing happens within the sample, and 0 otherwise.

Everything after step 2 runs in a single forward pass over the path, chunk
by chunk, so memory does not grow with ``N``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .models import ModelTheta
from .sde import DEFAULT_CHUNK, PathChunk, PathSample, n_steps

__all__ = [
    "EstimatorSchedule",
    "EstimationOutcome",
    "ErrorDecomposition",
    "StoppingResult",
    "ScheduleOverrideWarning",
    "UnsupportedModeError",
    "make_schedule",
    "density_preestimate",
    "truncate_density",
    "threshold",
    "stopping_rule",
    "stopping_time",
    "weight_from_prefix",
    "SequentialEstimator",
    "estimate_drift",
    "decompose_error",
]


class ScheduleOverrideWarning(UserWarning):
    """A schedule parameter departs from its default formula."""


class UnsupportedModeError(RuntimeError):
    pass


_OVERRIDE_KEYS = {"delta", "a0", "varsigma", "h", "N0", "allow_gamma0"}


@dataclass(frozen=True)
class EstimatorSchedule:
    """All tuning parameters derived from ``T`` and the exponents."""

    T: float
    gamma: float
    gamma0: float
    beta: float
    x0: float
    epsilon_T: float
    delta: float
    N: int
    N0: int
    varsigma_T: float
    upsilon_T: float
    a0: float
    h: float
    a0_override: float | None = None
    overrides: Mapping = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["overrides"] = dict(self.overrides)
        return d


def make_schedule(T: float, gamma: float = 0.5, gamma0: float = 0.75, beta: float = 1.5,
                  x0: float = 0.0, overrides: Mapping | None = None) -> EstimatorSchedule:
    """Derive the estimator schedule for horizon ``T``.

    Defaults: ``delta = 1 / ((T+1) (ln T)^{1+gamma})``, ``N = floor(T/delta)``,
    ``N0 = ceil(N^gamma0)``, ``h = T^{-1/(2 beta + 1)}``,
    ``varsigma = T^{-gamma0/2} / ln T``, ``upsilon = (ln T)^{-a0}`` with
    ``a0 = (sqrt(gamma + 1) - 1) / 10``, ``epsilon_T = (ln T)^{-(1+gamma)}``.

    ``overrides`` may set ``delta``, ``a0``, ``varsigma``, ``h``, ``N0`` or the
    flag ``allow_gamma0``; every override is kept in ``schedule.overrides``.
    """
    ov = dict(overrides or {})
    unknown = set(ov) - _OVERRIDE_KEYS
    if unknown:
        raise ValueError(f"unknown schedule overrides: {sorted(unknown)}")
    ov = {k: v for k, v in ov.items() if v is not None and v is not False}
    if not T >= 3:
        raise ValueError(f"T must be >= 3, got {T}")
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if not 2 / 3 < gamma0 < 1 and not ov.get("allow_gamma0"):
        raise ValueError(f"gamma0 must lie in (2/3, 1), got {gamma0}")
    if not 1 < beta < 2:
        raise ValueError(f"beta must lie in (1, 2), got {beta}")
    lnT = math.log(T)
    l_T = lnT ** (1 + gamma)
    delta = float(ov["delta"]) if "delta" in ov else 1.0 / ((T + 1) * l_T)
    if "delta" in ov:
        warnings.warn(f"delta overridden to {delta!r}", ScheduleOverrideWarning, stacklevel=2)
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    N = n_steps(T, delta)
    if "N0" in ov:
        N0 = int(ov["N0"])
        if not 1 <= N0 < N:
            raise ValueError(f"N0 override must satisfy 1 <= N0 < N={N}")
    else:
        N0 = math.ceil(N ** gamma0)
        if not 1 < N0 < N:
            raise ValueError(f"schedule gives N0={N0}, N={N}; need 1 < N0 < N")
    a0 = float(ov["a0"]) if "a0" in ov else (math.sqrt(gamma + 1) - 1) / 10
    h = float(ov["h"]) if "h" in ov else T ** (-1 / (2 * beta + 1))
    vs = float(ov["varsigma"]) if "varsigma" in ov else T ** (-gamma0 / 2) / lnT
    if not (h > 0 and vs > 0 and a0 > 0):
        raise ValueError("h, varsigma and a0 must be positive")
    return EstimatorSchedule(
        T=float(T), gamma=float(gamma), gamma0=float(gamma0), beta=float(beta), x0=float(x0),
        epsilon_T=1.0 / l_T, delta=delta, N=N, N0=N0, varsigma_T=vs,
        upsilon_T=lnT ** (-a0), a0=a0, h=h,
        a0_override=float(ov["a0"]) if "a0" in ov else None,
        overrides=ov,
    )


def density_preestimate(path, sched: EstimatorSchedule) -> float:
    """Indicator-kernel density estimate at ``x0`` from ``y_{t_0} .. y_{t_{N0-1}}``."""
    N0 = sched.N0
    if N0 < 2:
        raise ValueError("density pre-estimate needs N0 >= 2")
    values = path.values if isinstance(path, PathSample) else np.asarray(path, dtype=float)
    if len(values) < N0:
        raise ValueError(f"need at least N0={N0} observations, got {len(values)}")
    vs = sched.varsigma_T
    hits = np.count_nonzero(np.abs(np.asarray(values[:N0]) - sched.x0) <= vs)
    return hits / (2 * (N0 - 1) * vs)


def truncate_density(q_hat: float, upsilon: float) -> float:
    """Clip to ``[sqrt(upsilon), 1/sqrt(upsilon)]``."""
    if not 0 < upsilon < 1:
        raise ValueError(f"upsilon must lie in (0, 1), got {upsilon}")
    lo = math.sqrt(upsilon)
    hi = 1 / lo
    if q_hat < lo:
        return lo
    if q_hat > hi:
        return hi
    return float(q_hat)


def threshold(q_tilde: float, sched: EstimatorSchedule) -> float:
    return sched.h * (sched.N - sched.N0) * (2 * q_tilde - sched.upsilon_T)


@dataclass(frozen=True)
class StoppingResult:
    stop_index: int
    kappa: float
    gamma_event: bool
    H: float
    N0: int
    N: int

    def weight(self, j: int) -> float:
        """The weight of observation ``j``: 1 before the stop, kappa at it, 0 after."""
        if j < self.stop_index:
            return 1.0
        if j == self.stop_index:
            return self.kappa
        return 0.0

    def weights(self) -> np.ndarray:
        """Weights for ``j = N0 .. N``."""
        j = np.arange(self.N0, self.N + 1)
        w = (j < self.stop_index).astype(float)
        w[j == self.stop_index] = self.kappa
        return w


def stopping_rule(chi: Iterable, H: float, N0: int = 0) -> StoppingResult:
    """Apply the stopping rule to window hits ``chi`` indexed ``j = N0, N0+1, ...``.

    The last entry is ``j = N``; beyond it every step counts as a hit.
    """
    if not H > 0:
        raise ValueError(f"threshold must be positive, got {H}")
    chi = np.asarray(chi, dtype=float)
    N = N0 + len(chi) - 1
    cs = np.cumsum(chi)
    pos = int(np.searchsorted(cs, H, side="left"))
    if pos < len(cs):
        before = cs[pos - 1] if pos else 0.0
        assert chi[pos] > 0, "crossing step must be a window hit"
        kappa = (H - before) / chi[pos]
        return StoppingResult(N0 + pos, float(kappa), True, float(H), N0, N)
    total = cs[-1] if len(cs) else 0.0
    return StoppingResult(N + int(math.ceil(H - total)), 1.0, False, float(H), N0, N)


def _window_hits(values, sched: EstimatorSchedule, lo: int, hi: int) -> np.ndarray:
    """``chi_j`` for ``j = lo .. hi`` (uses ``y_{t_{lo-1}} .. y_{t_{hi-1}}``)."""
    y = np.asarray(values[lo - 1: hi], dtype=float)
    return (np.abs(y - sched.x0) <= sched.h).astype(float)


def stopping_time(path: PathSample, sched: EstimatorSchedule, H: float) -> StoppingResult:
    return stopping_rule(_window_hits(path.values, sched, sched.N0, sched.N), H, sched.N0)


def weight_from_prefix(prefix, sched: EstimatorSchedule, j: int, H: float | None = None) -> float:
    """Weight of observation ``j`` computed from ``y_{t_0} .. y_{t_{j-1}}`` only.

    With ``H=None`` the threshold is rebuilt from the prefix (it only needs
    the first ``N0`` values).
    """
    prefix = np.asarray(prefix, dtype=float)
    if not sched.N0 <= j <= sched.N:
        raise ValueError(f"j={j} outside [N0, N]")
    if len(prefix) < j:
        raise ValueError("prefix must contain y_{t_0} .. y_{t_{j-1}}")
    prefix = prefix[:j]
    if H is None:
        q = truncate_density(density_preestimate(prefix, sched), sched.upsilon_T)
        H = threshold(q, sched)
    chi = _window_hits(prefix, sched, sched.N0, j)
    before = float(chi[:-1].sum())
    if before >= H:
        return 0.0
    if before + chi[-1] >= H:
        return (H - before) / chi[-1]
    return 1.0


@dataclass
class EstimationOutcome:
    estimate: float
    q_hat: float
    q_tilde: float
    H_T: float
    stop_index: int
    kappa: float
    gamma_event: bool
    weight_checksum: float
    window_hits: int
    diagnostics: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ErrorDecomposition:
    """Terms of ``estimate - S(x0) = upsilon1 + bias + martingale`` on the stopping event."""

    error: float
    upsilon1: float
    upsilon2: float
    bias: float
    martingale: float
    xi: float
    xi_weight_ratio: float
    residual: float
    relative_residual: float
    gamma_event: bool


class SequentialEstimator:
    """Streaming evaluation of the estimator; feed :class:`PathChunk` objects in order.

    With ``model`` given and chunks carrying Brownian records, the pass also
    accumulates the terms of the error decomposition.
    """

    def __init__(self, sched: EstimatorSchedule, injected_q_tilde: float | None = None,
                 injected_threshold: float | None = None, model: ModelTheta | None = None):
        self.sched = sched
        self.model = model
        self._pre_hits = 0
        self.q_hat = math.nan
        self.q_tilde = math.nan
        self.H = None
        if injected_threshold is not None:
            self._set_threshold(float(injected_threshold))
            if injected_q_tilde is not None:
                self.q_tilde = float(injected_q_tilde)
        elif injected_q_tilde is not None:
            self.q_tilde = float(injected_q_tilde)
            self._set_threshold(threshold(self.q_tilde, sched))
        self._next = 0
        self._last = math.nan
        self._hits = 0          # window hits counted towards the stop
        self._window_total = 0  # all window hits for j = N0 .. N
        self.stop_index = None
        self.kappa = 1.0
        self._acc = dict(dy=0.0, rho=0.0, rhostar=0.0, f=0.0, eta=0.0, dw=0.0, w2=0.0)
        self._diag = None

    def _set_threshold(self, H):
        if not H > 0:
            raise ValueError(f"threshold must be positive, got {H}")
        self.H = H
        self._K = math.ceil(H)

    def _finish_pre(self):
        s = self.sched
        if s.N0 < 2:
            raise ValueError("density pre-estimate needs N0 >= 2 (inject q_tilde in test mode)")
        self.q_hat = self._pre_hits / (2 * (s.N0 - 1) * s.varsigma_T)
        self.q_tilde = truncate_density(self.q_hat, s.upsilon_T)
        self._set_threshold(threshold(self.q_tilde, s))

    def feed(self, chunk: PathChunk) -> None:
        s = self.sched
        v = np.asarray(chunk.values, dtype=float)
        g = chunk.start
        n = len(v)
        if g != self._next:
            raise ValueError(f"chunk starts at {g}, expected {self._next}")
        if n == 0:
            return
        if self.H is None:
            k = min(n, max(0, s.N0 - g))
            if k:
                self._pre_hits += int(np.count_nonzero(np.abs(v[:k] - s.x0) <= s.varsigma_T))
            if g + n >= s.N0:
                self._finish_pre()
        if g == 0:
            prev, cur, j0 = v[:-1], v[1:], 1
        else:
            prev, cur, j0 = np.concatenate([[self._last], v[:-1]]), v, g
        self._last = float(v[-1])
        self._next = g + n
        lo = max(s.N0, j0) - j0
        hi = min(s.N, j0 + len(cur) - 1) - j0 + 1
        if lo >= hi:
            return
        yp = prev[lo:hi]
        idx = np.flatnonzero(np.abs(yp - s.x0) <= s.h)
        self._window_total += len(idx)
        if self.stop_index is not None or not len(idx):
            return
        need = self._K - self._hits
        stopped = len(idx) >= need
        if stopped:
            idx = idx[:need]
            self.stop_index = j0 + lo + int(idx[-1])
            self.kappa = self.H - (self._K - 1)
        self._hits += len(idx)
        w = np.ones(len(idx))
        if stopped:
            w[-1] = self.kappa
        ypw = yp[idx]
        dy = cur[lo:hi][idx] - ypw
        a = self._acc
        a["dy"] += float(w @ dy)
        a["w2"] += float(w @ w)
        if chunk.brownian_increments is not None and self.model is not None:
            self._diag = True
            m = self.model
            sl = slice(lo, hi)
            dw = np.asarray(chunk.brownian_increments)[sl][idx]
            dr = np.asarray(chunk.drift_integrals)[sl][idx]
            eta = np.asarray(chunk.noise_integrals)[sl][idx]
            Sy = np.asarray(m.drift(ypw), dtype=float)
            sig = np.asarray(m.diffusion(ypw), dtype=float)
            a["rho"] += float(w @ (dr - Sy * s.delta))
            a["f"] += float(w @ (Sy - float(m.drift(s.x0))))
            a["eta"] += float(w @ eta)
            a["rhostar"] += float(w @ (eta - sig * dw))
            a["dw"] += float(w @ dw)

    def finish(self) -> EstimationOutcome:
        s = self.sched
        if self.H is None or self._next < s.N + 1:
            raise ValueError(f"path ended after {self._next} values; schedule needs N+1={s.N + 1}")
        H = self.H
        gamma = self.stop_index is not None
        if gamma:
            stop = self.stop_index
            checksum = (self._hits - 1) + self.kappa
            est = self._acc["dy"] / (s.delta * H)
        else:
            stop = s.N + (self._K - self._hits)
            self.kappa = 1.0
            checksum = float(self._hits)
            est = 0.0
        diag = None
        if self._diag:
            a = self._acc
            dH = s.delta * H
            S0 = float(self.model.drift(s.x0))
            diag = dict(
                upsilon1=a["rho"] / dH,
                upsilon2=a["rhostar"] / dH,
                bias=a["f"] / H,
                martingale=a["eta"] / dH,
                xi=a["dw"] / math.sqrt(dH),
                xi_weight_ratio=a["w2"] / H,
                drift_at_x0=S0,
            )
        return EstimationOutcome(
            estimate=float(est), q_hat=float(self.q_hat), q_tilde=float(self.q_tilde),
            H_T=float(H), stop_index=int(stop), kappa=float(self.kappa), gamma_event=gamma,
            weight_checksum=float(checksum), window_hits=int(self._window_total),
            diagnostics=diag,
        )


def _check_path(path: PathSample, sched: EstimatorSchedule):
    if not math.isclose(path.delta, sched.delta, rel_tol=1e-12):
        raise ValueError(f"path delta {path.delta!r} != schedule delta {sched.delta!r}")
    if path.N < sched.N:
        raise ValueError(f"path has N={path.N} steps, schedule needs N={sched.N}")


def estimate_drift(path: PathSample, sched: EstimatorSchedule,
                   injected_q_tilde: float | None = None,
                   injected_threshold: float | None = None,
                   model: ModelTheta | None = None,
                   chunk_size: int = DEFAULT_CHUNK) -> EstimationOutcome:
    """Sequential drift estimate at ``sched.x0`` from a stored path.

    ``injected_q_tilde`` / ``injected_threshold`` bypass the density
    pre-estimate (test mode). With ``model`` and a diagnostic path the
    outcome carries the error-decomposition terms.
    """
    _check_path(path, sched)
    est = SequentialEstimator(sched, injected_q_tilde, injected_threshold, model)
    for chunk in path.chunks(chunk_size):
        est.feed(chunk)
        if est._next > sched.N:
            break
    return est.finish()


def decomposition_from_outcome(out: EstimationOutcome) -> ErrorDecomposition:
    d = out.diagnostics
    if d is None:
        raise UnsupportedModeError("outcome carries no diagnostic terms")
    err = out.estimate - d["drift_at_x0"]
    parts = d["upsilon1"] + d["bias"] + d["martingale"]
    resid = err - parts if out.gamma_event else math.nan
    scale = max(abs(err), abs(d["upsilon1"]), abs(d["bias"]), abs(d["martingale"]), 1e-300)
    return ErrorDecomposition(
        error=err, upsilon1=d["upsilon1"], upsilon2=d["upsilon2"], bias=d["bias"],
        martingale=d["martingale"], xi=d["xi"], xi_weight_ratio=d["xi_weight_ratio"],
        residual=resid, relative_residual=abs(resid) / scale, gamma_event=out.gamma_event,
    )


def decompose_error(path: PathSample, sched: EstimatorSchedule, outcome: EstimationOutcome | None,
                    model: ModelTheta) -> ErrorDecomposition:
    """Split the estimation error using the latent Brownian record of ``path``.

    ``upsilon1`` collects the within-step drift variation (including the
    time-discretisation remainder), ``bias`` the kernel bias term and
    ``martingale`` the full stochastic term; ``xi`` is the normalised
    Brownian sum ``sum w_j chi_j dW_j / sqrt(delta H)``.
    """
    if not path.diagnostic or path.drift_integrals is None:
        raise UnsupportedModeError("path has no Brownian record; simulate with record_brownian=True")
    kw = {}
    if outcome is not None:
        kw = dict(injected_q_tilde=outcome.q_tilde, injected_threshold=outcome.H_T)
    out = estimate_drift(path, sched, model=model, **kw)
    if outcome is not None:
        out.q_hat = outcome.q_hat
    return decomposition_from_outcome(out)
