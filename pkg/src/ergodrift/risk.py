"""Monte Carlo risk evaluation, the nonasymptotic bound and the efficiency constant.

Replication ``i`` of a run with master seed ``m`` draws its path from the
stream ``SeedSequence(m, spawn_key=(i,))``; paths are streamed chunk by
chunk into :class:`~ergodrift.estimator.SequentialEstimator`, so memory does
not depend on the schedule length. Aggregates use ``math.fsum`` and are
independent of completion order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .estimator import EstimatorSchedule, SequentialEstimator, make_schedule
from .models import ModelTheta, model_from_spec
from .oracle import density_oracle, ergodic_mean, moment_constants, window_indicator
from .sde import GENERATOR_ID, iter_path_chunks

__all__ = [
    "ReplicationError",
    "RiskReport",
    "TrendVerdict",
    "ConcentrationReport",
    "minimax_rate",
    "efficiency_constant",
    "normal_abs_moment",
    "upper_bound_terms",
    "upper_bound_U",
    "model_upper_bound",
    "run_replication",
    "pointwise_risk_mc",
    "efficiency_study",
    "trend_verdict",
    "concentration_study",
    "ks_normal",
]


class ReplicationError(RuntimeError):
    """A replication failed; carries the context needed to rerun it alone."""

    def __init__(self, message, master_seed, replication, T):
        super().__init__(f"{message} (master_seed={master_seed}, replication={replication}, T={T})")
        self.master_seed = master_seed
        self.replication = replication
        self.T = T

    def record(self) -> dict:
        return dict(error=str(self), master_seed=self.master_seed,
                    replication=self.replication, T=self.T)


def minimax_rate(T: float, beta: float) -> float:
    """``phi_T = T^{beta / (2 beta + 1)}``."""
    return T ** (beta / (2 * beta + 1))


def efficiency_constant(model: ModelTheta, x0: float, q: float | None = None) -> float:
    """``2 q(x0) / sigma(x0)^2``; pass ``q`` to skip the density oracle."""
    if q is None:
        q = density_oracle(model)(x0)
    s = float(model.diffusion(x0))
    return 2 * float(q) / (s * s)


def normal_abs_moment() -> float:
    """``E|xi| = sqrt(2/pi)`` for standard normal ``xi``."""
    return math.sqrt(2 / math.pi)


def upper_bound_terms(delta, h, N, N0, upsilon, L, M, sigma_max, x_star) -> tuple:
    """The three terms of ``U*``: discretisation, bias and stochastic."""
    d_star = (M + L * x_star + 2 * x_star) ** 2 * (L + M) + sigma_max ** 2
    L1 = 2 * (sigma_max ** 2 + 2 * delta * (M * M + L ** 3 * d_star + L * L * x_star ** 2))
    t1 = max(L, M) * math.sqrt(delta * L1)
    t2 = M * h
    t3 = sigma_max / (math.sqrt(delta * h * (N - N0)) * upsilon ** 0.25)
    return t1, t2, t3


def upper_bound_U(sched: EstimatorSchedule, L: float, M: float, sigma_max: float,
                  x_star: float) -> float:
    return math.fsum(upper_bound_terms(sched.delta, sched.h, sched.N, sched.N0, sched.upsilon_T,
                                       L, M, sigma_max, x_star))


def model_upper_bound(sched: EstimatorSchedule, model: ModelTheta) -> float:
    """``U*`` with the class constants attached to ``model``."""
    return upper_bound_U(sched, model.L, model.M, model.sigma_max, model.x_star)


# -- replications ---------------------------------------------------------------

def run_replication(model: ModelTheta, sched: EstimatorSchedule, master_seed: int, rep: int,
                    diagnostic: bool = False, y0: float = 0.0, burn_in: float = 0.0,
                    substeps: int = 16) -> dict:
    """Simulate one path and estimate; returns a flat record."""
    est = SequentialEstimator(sched, model=model if diagnostic else None)
    for chunk in iter_path_chunks(model, sched.T, sched.delta, substeps=substeps,
                                  seed=master_seed, record_brownian=diagnostic, y0=y0,
                                  burn_in=burn_in, stream=(rep,)):
        est.feed(chunk)
    out = est.finish()
    truth = float(model.drift(sched.x0))
    rec = dict(rep=rep, estimate=out.estimate, error=out.estimate - truth,
               gamma_event=out.gamma_event, q_hat=out.q_hat, q_tilde=out.q_tilde,
               H_T=out.H_T, stop_index=out.stop_index, kappa=out.kappa)
    if diagnostic and out.diagnostics is not None:
        d = out.diagnostics
        rec.update(xi=d["xi"], upsilon1=d["upsilon1"], bias=d["bias"],
                   martingale=d["martingale"])
        if out.gamma_event:
            resid = rec["error"] - (d["upsilon1"] + d["bias"] + d["martingale"])
            scale = max(abs(rec["error"]), abs(d["upsilon1"]), abs(d["bias"]),
                        abs(d["martingale"]), 1e-300)
            rec["relative_residual"] = abs(resid) / scale
        else:
            rec["relative_residual"] = math.nan
    return rec


def _worker(args):
    spec, sched_d, master_seed, rep, diagnostic, y0, burn_in, substeps = args
    model = model_from_spec(spec)
    sched = EstimatorSchedule(**sched_d)
    try:
        return run_replication(model, sched, master_seed, rep, diagnostic, y0, burn_in, substeps)
    except Exception as exc:  # re-raised with context in the parent
        return dict(rep=rep, failure=f"{type(exc).__name__}: {exc}")


def _default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return os.cpu_count() or 1


@dataclass
class RiskReport:
    """Monte Carlo summary, one entry per horizon in ``T_grid``.

    ``empirical_risk`` is the mean absolute error over replications where the
    stopping event occurred; ``unconditional_risk`` also counts the others
    (error ``|S(x0)|`` there). ``normalized_risk = phi_T * sqrt(efficiency) *
    empirical_risk``.
    """

    T_grid: list
    replications: list
    empirical_risk: list
    mc_stderr: list
    unconditional_risk: list
    unconditional_stderr: list
    normalized_risk: list
    normalized_stderr: list
    gamma_fail_rate: list
    U_star: list
    minimax_rate: list
    efficiency: float
    xi_samples: list | None = None
    records: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        """Plot-ready table rows."""
        return [dict(T=T, reps=n, risk=r, risk_stderr=se, normalized_risk=nr,
                     gamma_fail_rate=g, U_star=u)
                for T, n, r, se, nr, g, u in zip(self.T_grid, self.replications,
                                                  self.empirical_risk, self.mc_stderr,
                                                  self.normalized_risk, self.gamma_fail_rate,
                                                  self.U_star)]

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("records")
        if self.xi_samples is not None:
            d["xi_samples"] = [list(map(float, x)) for x in self.xi_samples]
        return d

    @staticmethod
    def concat(reports: list["RiskReport"]) -> "RiskReport":
        first = reports[0]
        out = {}
        for k in ("T_grid", "replications", "empirical_risk", "mc_stderr", "unconditional_risk",
                  "unconditional_stderr", "normalized_risk", "normalized_stderr",
                  "gamma_fail_rate", "U_star", "minimax_rate", "records"):
            out[k] = [v for r in reports for v in getattr(r, k)]
        xi = None
        if all(r.xi_samples is not None for r in reports):
            xi = [v for r in reports for v in r.xi_samples]
        prov = dict(first.provenance)
        prov["schedules"] = [s for r in reports for s in r.provenance.get("schedules", [])]
        return RiskReport(efficiency=first.efficiency, xi_samples=xi, provenance=prov, **out)


def _mean_se(x) -> tuple[float, float]:
    n = len(x)
    if n == 0:
        return math.nan, math.nan
    m = math.fsum(x) / n
    if n < 2:
        return m, math.nan
    var = math.fsum((v - m) ** 2 for v in x) / (n - 1)
    return m, math.sqrt(var / n)


def pointwise_risk_mc(model: ModelTheta, sched: EstimatorSchedule, replications: int,
                      master_seed: int, diagnostic: bool = False, workers: int | None = 1,
                      y0: float = 0.0, burn_in: float = 0.0, substeps: int = 16,
                      efficiency: float | None = None) -> RiskReport:
    """Monte Carlo pointwise risk of the sequential estimator at ``sched.x0``.

    ``workers=None`` uses every available core; ``workers=1`` runs in
    process. Parallel runs need a catalog model (rebuilt from ``model.spec``
    in the workers).
    """
    if replications < 2:
        raise ValueError("replications must be >= 2")
    workers = _default_workers() if workers is None else int(workers)
    if workers > 1 and model.spec is None:
        raise ValueError("parallel runs need a catalog model (model.spec is None)")
    master_seed = int(master_seed)
    if workers > 1:
        args = [(model.spec, sched.to_dict(), master_seed, i, diagnostic, y0, burn_in, substeps)
                for i in range(replications)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_worker, args, chunksize=max(1, replications // (4 * workers))))
        for r in records:
            if "failure" in r:
                raise ReplicationError(r["failure"], master_seed, r["rep"], sched.T)
    else:
        records = []
        for i in range(replications):
            try:
                records.append(run_replication(model, sched, master_seed, i, diagnostic, y0,
                                               burn_in, substeps))
            except Exception as exc:
                raise ReplicationError(f"{type(exc).__name__}: {exc}", master_seed, i,
                                       sched.T) from exc
    records.sort(key=lambda r: r["rep"])

    ok = [abs(r["error"]) for r in records if r["gamma_event"]]
    allerr = [abs(r["error"]) for r in records]
    risk, se = _mean_se(ok)
    urisk, use = _mean_se(allerr)
    if efficiency is None:
        efficiency = efficiency_constant(model, sched.x0)
    scale = minimax_rate(sched.T, sched.beta) * math.sqrt(efficiency)
    fail = sum(not r["gamma_event"] for r in records) / len(records)
    xi = None
    if diagnostic:
        xi = [np.array([r["xi"] for r in records if r["gamma_event"]])]
    prov = dict(
        model=model.spec, master_seed=master_seed, generator=GENERATOR_ID,
        stream="SeedSequence(master_seed, spawn_key=(replication,))",
        y0=y0, burn_in=burn_in, substeps=substeps,
        schedules=[sched.to_dict()],
        class_constants=dict(L=model.L, M=model.M, sigma_max=model.sigma_max,
                             x_star=model.x_star),
    )
    return RiskReport(
        T_grid=[sched.T], replications=[replications], empirical_risk=[risk], mc_stderr=[se],
        unconditional_risk=[urisk], unconditional_stderr=[use],
        normalized_risk=[scale * risk], normalized_stderr=[scale * se],
        gamma_fail_rate=[fail], U_star=[model_upper_bound(sched, model)],
        minimax_rate=[minimax_rate(sched.T, sched.beta)], efficiency=efficiency,
        xi_samples=xi, records=[records], provenance=prov,
    )


# -- studies ----------------------------------------------------------------------

@dataclass(frozen=True)
class TrendVerdict:
    band: tuple
    in_band: tuple
    slope: float
    slope_stderr: float
    upward_trend: bool

    @property
    def all_in_band(self) -> bool:
        return all(self.in_band)

    @property
    def passed(self) -> bool:
        return self.all_in_band and not self.upward_trend


def trend_verdict(T_grid, values, stderr, band=(0.6, 1.4)) -> TrendVerdict:
    """Band membership and a weighted least-squares slope of ``values`` on ``ln T``.

    An upward trend is flagged when the slope exceeds twice its standard error.
    """
    lo, hi = band
    v = np.asarray(values, dtype=float)
    inb = tuple(bool(lo <= x <= hi) for x in v)
    if len(v) < 2:
        return TrendVerdict(tuple(band), inb, math.nan, math.nan, False)
    x = np.log(np.asarray(T_grid, dtype=float))
    w = 1 / np.asarray(stderr, dtype=float) ** 2
    xm = np.sum(w * x) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    slope = float(np.sum(w * (x - xm) * v) / sxx)
    se = float(math.sqrt(1 / sxx))
    return TrendVerdict(tuple(band), inb, slope, se, slope > 2 * se)


def efficiency_study(model: ModelTheta, T_grid, reps_grid, params: dict | None = None,
                     master_seed: int = 0, band=(0.6, 1.4), **mc_kwargs):
    """Run :func:`pointwise_risk_mc` across ``T_grid`` and judge the normalized risk.

    ``params`` holds the schedule arguments ``gamma, gamma0, beta, x0, overrides``.
    Returns ``(report, verdict)``.
    """
    T_grid = [float(t) for t in T_grid]
    if any(t < 3 for t in T_grid) or T_grid != sorted(T_grid):
        raise ValueError("T_grid must be ascending with every T >= 3")
    if len(reps_grid) != len(T_grid):
        raise ValueError("reps_grid must match T_grid")
    params = dict(params or {})
    eff = efficiency_constant(model, params.get("x0", 0.0))
    reports = [pointwise_risk_mc(model, make_schedule(T, **params), int(n), master_seed,
                                 efficiency=eff, **mc_kwargs)
               for T, n in zip(T_grid, reps_grid)]
    rep = reports[0] if len(reports) == 1 else RiskReport.concat(reports)
    verdict = trend_verdict(rep.T_grid, rep.normalized_risk, rep.normalized_stderr, band)
    return rep, verdict


@dataclass
class ConcentrationReport:
    """Exceedance frequencies of ``|D_N(chi_h)| >= kappa* T`` per horizon.

    ``D_N`` is a sum over observations; ``time_normalized_frequency`` uses
    ``delta |D_N|`` (the same sum in time units) for comparison.
    """

    T_grid: list
    replications: int
    kappa_star: float
    exceedance_frequency: list
    time_normalized_frequency: list
    quantile99: list
    median_abs: list
    centre: list

    @property
    def decreasing(self) -> bool:
        f = self.exceedance_frequency
        return all(b < a for a, b in zip(f, f[1:]))


def _deviation_sum(model, sched, master_seed, rep, centre, y0, burn_in, substeps):
    chi_hits = 0
    for chunk in iter_path_chunks(model, sched.T, sched.delta, substeps=substeps,
                                  seed=master_seed, y0=y0, burn_in=burn_in, stream=(rep,)):
        v = chunk.values[1:] if chunk.start == 0 else chunk.values
        chi_hits += int(np.count_nonzero(np.abs(v - sched.x0) <= sched.h))
    return chi_hits - sched.N * centre


def concentration_study(model: ModelTheta, T_grid, replications: int, params: dict | None = None,
                        master_seed: int = 0, kappa_star: float = 0.2, y0: float = 0.0,
                        burn_in: float = 0.0, substeps: int = 16) -> ConcentrationReport:
    """Empirical frequency of ``|D_N(chi_{h,x0})| >= kappa_star * T``."""
    params = dict(params or {})
    freq, tfreq, q99, med, centres = [], [], [], [], []
    for T in T_grid:
        sched = make_schedule(T, **params)
        chi = window_indicator(sched.x0, sched.h)
        centre = ergodic_mean(model, chi, points=chi.points)
        d = np.array([_deviation_sum(model, sched, master_seed, i, centre, y0, burn_in, substeps)
                      for i in range(replications)])
        a = np.abs(d)
        freq.append(float(np.mean(a >= kappa_star * T)))
        tfreq.append(float(np.mean(sched.delta * a >= kappa_star * T)))
        q99.append(float(np.quantile(a, 0.99)))
        med.append(float(np.median(a)))
        centres.append(centre)
    return ConcentrationReport([float(t) for t in T_grid], replications, kappa_star, freq, tfreq,
                               q99, med, centres)


def ks_normal(samples) -> tuple[float, float]:
    """Kolmogorov-Smirnov statistic and asymptotic p-value against N(0, 1)."""
    x = np.asarray(samples, dtype=float)
    if len(x) < 100:
        raise ValueError("the asymptotic KS distribution needs at least 100 samples")
    res = stats.kstest(x, "norm", method="asymp")
    return float(res.statistic), float(res.pvalue)
