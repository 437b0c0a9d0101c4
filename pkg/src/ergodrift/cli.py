"""Command-line runner: ``ergodrift {simulate,estimate,risk,study,oracle,diagnose}``.

Settings come from (highest first) command-line flags, a flat ``key = value``
config file (``--config``; an ``[ergodrift]`` section header is optional) and
built-in defaults. ``ERGODRIFT_SEED`` is used when no seed is given anywhere.

Result files are written atomically and contain no timestamps, so rerunning a
config reproduces them byte for byte; wall-clock data goes to a sidecar
``<output>.meta.json``. Failures print one JSON error record on stderr and exit
nonzero (2 for configuration errors, 1 for runtime errors).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import platform
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .estimator import ScheduleOverrideWarning, estimate_drift, make_schedule
from .models import make_model
from .oracle import density_oracle
from .pathio import atomic_write, load_path, load_path_csv, save_path, save_path_csv
from .risk import (ReplicationError, concentration_study, efficiency_study, ks_normal,
                   normal_abs_moment, pointwise_risk_mc)
from .sde import simulate_path

COMMANDS = ("simulate", "estimate", "risk", "study", "oracle", "diagnose")


class ConfigError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    command: str = "risk"
    drift: str = "ou(1)"
    diffusion: str = "const_sigma(1)"
    x_star: float | None = None
    T: float = 200.0
    gamma: float = 0.5
    gamma0: float = 0.75
    beta: float = 1.5
    x0: float = 0.0
    delta: float | None = None
    a0: float | None = None
    varsigma: float | None = None
    h: float | None = None
    N0: int | None = None
    allow_gamma0: bool = False
    replications: int = 100
    master_seed: int | None = None
    y0: float = 0.0
    burn_in: float = 0.0
    substeps: int = 16
    diagnostic: bool = False
    T_grid: list = field(default_factory=lambda: [200.0, 500.0, 1000.0])
    reps_grid: list = field(default_factory=lambda: [500, 300, 100])
    band: list = field(default_factory=lambda: [0.6, 1.4])
    kappa_star: float = 0.2
    concentration_reps: int = 0
    q_tilde: float | None = None
    threshold: float | None = None
    path: str | None = None
    output: str | None = None
    format: str = "json"
    workers: int | None = None
    dump_replications: str | None = None
    xmin: float = -4.0
    xmax: float = 4.0
    points: int = 81

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def overrides(self) -> dict:
        ov = {k: getattr(self, k) for k in ("delta", "a0", "varsigma", "h", "N0")}
        ov["allow_gamma0"] = self.allow_gamma0
        return {k: v for k, v in ov.items() if v is not None and v is not False}

    def schedule_params(self) -> dict:
        return dict(gamma=self.gamma, gamma0=self.gamma0, beta=self.beta, x0=self.x0,
                    overrides=self.overrides())

    def validate(self) -> None:
        """Check every field against the module preconditions; raise ConfigError."""
        if self.command not in COMMANDS:
            raise ConfigError("command", f"must be one of {COMMANDS}")
        if self.format not in ("csv", "json"):
            raise ConfigError("format", "must be csv or json")
        if not self.T >= 3:
            raise ConfigError("T", "must be >= 3")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma", "must lie in (0, 1)")
        if not (2 / 3 < self.gamma0 < 1 or self.allow_gamma0):
            raise ConfigError("gamma0", "must lie in (2/3, 1) (or set allow_gamma0)")
        if not 1 < self.beta < 2:
            raise ConfigError("beta", "must lie in (1, 2)")
        for name in ("delta", "a0", "varsigma", "h"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(name, "must be positive")
        if self.replications < 2:
            raise ConfigError("replications", "must be >= 2")
        if self.substeps < 1:
            raise ConfigError("substeps", "must be >= 1")
        if self.burn_in < 0:
            raise ConfigError("burn_in", "must be >= 0")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        if len(self.T_grid) != len(self.reps_grid):
            raise ConfigError("reps_grid", "must have one entry per T_grid value")
        if any(t < 3 for t in self.T_grid) or list(self.T_grid) != sorted(self.T_grid):
            raise ConfigError("T_grid", "must be ascending with every T >= 3")
        if any(n < 2 for n in self.reps_grid):
            raise ConfigError("reps_grid", "every entry must be >= 2")
        if len(self.band) != 2 or not self.band[0] < self.band[1]:
            raise ConfigError("band", "must be two increasing numbers")
        if self.points < 2 or not self.xmin < self.xmax:
            raise ConfigError("points", "need points >= 2 and xmin < xmax")
        if self.command in ("simulate", "oracle", "risk", "study", "diagnose") and not self.output:
            raise ConfigError("output", f"required for {self.command}")
        try:
            make_model(self.drift, self.diffusion, x0=self.x0, x_star=self.x_star)
        except Exception as exc:
            raise ConfigError("drift", str(exc)) from exc
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ScheduleOverrideWarning)
                make_schedule(self.T, **self.schedule_params())
        except Exception as exc:
            raise ConfigError("T", str(exc)) from exc


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw):
    if raw is None:
        return None
    t = str(_TYPES[name])
    try:
        if t.startswith("list"):
            items = raw if isinstance(raw, list) else [s for s in str(raw).replace(",", " ").split()]
            conv = int if name == "reps_grid" else float
            return [conv(float(s)) if conv is int else conv(s) for s in items]
        if t.startswith("bool"):
            if isinstance(raw, bool):
                return raw
            return str(raw).strip().lower() in ("1", "true", "yes", "on")
        if raw == "" or str(raw).lower() == "none":
            return None
        if t.startswith("int"):
            return int(raw)
        if t.startswith("float"):
            return float(raw)
        return str(raw)
    except ValueError as exc:
        raise ConfigError(name, f"cannot parse {raw!r}") from exc


def read_config_file(path) -> dict:
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[ergodrift]\n" + text
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(text)
    out = {}
    for sec in cp.sections():
        for k, v in cp[sec].items():
            key = k.replace("-", "_")
            if key not in _TYPES:
                raise ConfigError(key, "unknown config key")
            out[key] = _coerce(key, v)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ergodrift", description=__doc__.splitlines()[0],
                                argument_default=argparse.SUPPRESS)
    p.add_argument("--version", action="version", version=f"ergodrift {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = dict(
        simulate="simulate a path and store it (binary, or CSV if the name ends in .csv)",
        estimate="run the sequential estimator on a stored or freshly simulated path",
        risk="Monte Carlo pointwise risk at one horizon",
        study="normalized-risk study across a grid of horizons",
        oracle="tabulate the invariant density (CSV columns x, q)",
        diagnose="diagnostic-mode run: error decomposition and Gaussianity of xi",
    )
    for name in COMMANDS:
        s = sub.add_parser(name, help=helps[name], argument_default=argparse.SUPPRESS)
        s.add_argument("--config", help="flat key = value config file")
        g = s.add_argument_group("model")
        g.add_argument("--drift", help='catalog drift, e.g. "ou(1)", "tanh_drift(0.5,1.5)"')
        g.add_argument("--diffusion", help='catalog diffusion, e.g. "const_sigma(1)"')
        g.add_argument("--x-star", dest="x_star", type=float)
        g = s.add_argument_group("schedule")
        for flag, typ in (("T", float), ("gamma", float), ("gamma0", float), ("beta", float),
                          ("x0", float), ("delta", float), ("a0", float), ("varsigma", float),
                          ("h", float), ("N0", int)):
            g.add_argument(f"--{flag}", dest=flag, type=typ)
        g.add_argument("--allow-gamma0", dest="allow_gamma0", action="store_true")
        g = s.add_argument_group("simulation")
        g.add_argument("--seed", "--master-seed", dest="master_seed", type=int)
        g.add_argument("--replications", type=int)
        g.add_argument("--y0", type=float)
        g.add_argument("--burn-in", dest="burn_in", type=float)
        g.add_argument("--substeps", type=int)
        g.add_argument("--diagnostic", action="store_true")
        g.add_argument("--workers", type=int, help="worker processes (default: all cores)")
        g = s.add_argument_group("study")
        g.add_argument("--T-grid", dest="T_grid", nargs="+", type=float)
        g.add_argument("--reps-grid", dest="reps_grid", nargs="+", type=int)
        g.add_argument("--band", nargs=2, type=float)
        g.add_argument("--kappa-star", dest="kappa_star", type=float)
        g.add_argument("--concentration-reps", dest="concentration_reps", type=int)
        g = s.add_argument_group("estimate")
        g.add_argument("--path", help="stored path file (binary or .csv)")
        g.add_argument("--q-tilde", dest="q_tilde", type=float, help="inject the truncated density")
        g.add_argument("--threshold", type=float, help="inject the threshold H_T")
        g = s.add_argument_group("oracle")
        g.add_argument("--xmin", type=float)
        g.add_argument("--xmax", type=float)
        g.add_argument("--points", type=int)
        g = s.add_argument_group("output")
        g.add_argument("-o", "--output")
        g.add_argument("--format", choices=("csv", "json"))
        g.add_argument("--dump-replications", dest="dump_replications",
                       help="per-replication CSV")
    return p


def resolve_config(argv=None, environ=None) -> RunConfig:
    """Merge defaults, config file and flags (in increasing priority)."""
    environ = os.environ if environ is None else environ
    ns = vars(build_parser().parse_args(argv))
    merged = {}
    if "config" in ns:
        merged.update(read_config_file(ns.pop("config")))
    merged.update(ns)
    if merged.get("master_seed") is None:
        env = environ.get("ERGODRIFT_SEED")
        if env not in (None, ""):
            merged["master_seed"] = _coerce("master_seed", env)
    cfg = RunConfig.from_dict(merged)
    if cfg.master_seed is None:
        cfg.master_seed = 0
    if cfg.workers is None:
        cfg.workers = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") \
            else (os.cpu_count() or 1)
    return cfg


# -- emission -----------------------------------------------------------------------

def fmt_float(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def to_json(obj, indent: int = 0) -> str:
    """JSON with every float at 17 significant digits (non-finite values become null)."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        return "[" + ", ".join(to_json(v, indent + 1) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj) if math.isfinite(obj) else "null"
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def _csv_text(rows: list[dict], header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        cols = list(rows[0])
        w.writerow(cols)
        for r in rows:
            w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else
                        (str(v).lower() if isinstance(v, (bool, np.bool_)) else v)
                        for v in (r[c] for c in cols)])
    return buf.getvalue()


def _write_text(path, text):
    atomic_write(path, lambda fh: fh.write(text))


def _emit(cfg: RunConfig, result: dict, rows: list[dict] | None = None):
    """Write the result to ``cfg.output`` (or stdout) in the configured format."""
    doc = {"command": cfg.command, "config": cfg.to_dict(), "result": result}
    if cfg.format == "csv" and rows is not None:
        echo = "config " + json.dumps(cfg.to_dict(), sort_keys=True)
        text = _csv_text(rows, echo)
        if cfg.output:
            _write_text(cfg.output, text)
            _write_text(str(cfg.output) + ".summary.json", to_json(doc) + "\n")
        else:
            sys.stdout.write(text)
        return
    text = to_json(doc) + "\n"
    if cfg.output:
        _write_text(cfg.output, text)
    else:
        sys.stdout.write(text)


def _dump(cfg: RunConfig, report) -> None:
    if not cfg.dump_replications:
        return
    rows = []
    for T, recs in zip(report.T_grid, report.records):
        for r in recs:
            rows.append({"T": T, **r})
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    rows = [{c: r.get(c, math.nan) for c in cols} for r in rows]
    _write_text(cfg.dump_replications, _csv_text(rows))


# -- commands -------------------------------------------------------------------------

def _model(cfg):
    return make_model(cfg.drift, cfg.diffusion, x0=cfg.x0, x_star=cfg.x_star)


def _schedule(cfg):
    return make_schedule(cfg.T, **cfg.schedule_params())


def cmd_simulate(cfg):
    model = _model(cfg)
    delta = cfg.delta if cfg.delta is not None else _schedule(cfg).delta
    path = simulate_path(model, cfg.T, delta, substeps=cfg.substeps, seed=cfg.master_seed,
                         record_brownian=cfg.diagnostic, y0=cfg.y0, burn_in=cfg.burn_in)
    if str(cfg.output).endswith(".csv"):
        save_path_csv(path, cfg.output)
    else:
        save_path(path, cfg.output)
    result = dict(file=str(cfg.output), N=path.N, delta=path.delta, seed=path.seed,
                  generator_id=path.generator_id, method=path.meta["method"],
                  terminal=float(path.values[-1]))
    sys.stdout.write(to_json(result) + "\n")
    return result


def cmd_estimate(cfg):
    model = _model(cfg)
    sched = _schedule(cfg)
    if cfg.path:
        path = load_path_csv(cfg.path) if cfg.path.endswith(".csv") else load_path(cfg.path)
        source = dict(path=cfg.path, seed=path.seed, generator_id=path.generator_id)
    else:
        path = simulate_path(model, cfg.T, sched.delta, substeps=cfg.substeps,
                             seed=cfg.master_seed, record_brownian=cfg.diagnostic, y0=cfg.y0,
                             burn_in=cfg.burn_in)
        source = dict(simulated=True, seed=cfg.master_seed, generator_id=path.generator_id,
                      method=path.meta["method"])
    out = estimate_drift(path, sched, injected_q_tilde=cfg.q_tilde,
                         injected_threshold=cfg.threshold,
                         model=model if path.diagnostic else None)
    result = dict(outcome=out.to_dict(), truth=float(model.drift(sched.x0)),
                  schedule=sched.to_dict(),
                  provenance=dict(source=source, overrides=dict(sched.overrides), model=model.spec))
    _emit(cfg, result)
    return result


def cmd_risk(cfg):
    model = _model(cfg)
    sched = _schedule(cfg)
    rep = pointwise_risk_mc(model, sched, cfg.replications, cfg.master_seed,
                            diagnostic=cfg.diagnostic, workers=cfg.workers, y0=cfg.y0,
                            burn_in=cfg.burn_in, substeps=cfg.substeps)
    _dump(cfg, rep)
    result = rep.summary()
    _emit(cfg, result, rep.rows())
    return result


def cmd_study(cfg):
    model = _model(cfg)
    params = {k: v for k, v in cfg.schedule_params().items()}
    rep, verdict = efficiency_study(model, cfg.T_grid, cfg.reps_grid, params, cfg.master_seed,
                                    band=tuple(cfg.band), workers=cfg.workers, y0=cfg.y0,
                                    burn_in=cfg.burn_in, substeps=cfg.substeps)
    _dump(cfg, rep)
    result = rep.summary()
    result["verdict"] = dict(asdict(verdict), all_in_band=verdict.all_in_band,
                             passed=verdict.passed, limit=normal_abs_moment())
    if cfg.concentration_reps:
        conc = concentration_study(model, cfg.T_grid, cfg.concentration_reps, params,
                                   cfg.master_seed, cfg.kappa_star, cfg.y0, cfg.burn_in,
                                   cfg.substeps)
        result["concentration"] = asdict(conc)
    _emit(cfg, result, rep.rows())
    return result


def cmd_oracle(cfg):
    model = _model(cfg)
    dens = density_oracle(model)
    xs = np.linspace(cfg.xmin, cfg.xmax, cfg.points)
    qs = dens(xs)
    rows = [dict(x=float(x), q=float(q)) for x, q in zip(xs, qs)]
    result = dict(model=model.spec, normalizer=dens.normalizer, domain_cut=dens.domain_cut,
                  table=rows)
    if cfg.format == "json":
        _emit(cfg, result)
    else:
        _write_text(cfg.output, _csv_text(rows))
    return result


def cmd_diagnose(cfg):
    model = _model(cfg)
    sched = _schedule(cfg)
    rep = pointwise_risk_mc(model, sched, cfg.replications, cfg.master_seed, diagnostic=True,
                            workers=cfg.workers, y0=cfg.y0, burn_in=cfg.burn_in,
                            substeps=cfg.substeps)
    _dump(cfg, rep)
    recs = [r for r in rep.records[0] if r["gamma_event"]]
    xi = rep.xi_samples[0]
    ks = ks_normal(xi) if len(xi) >= 100 else (math.nan, math.nan)
    bias = [r["bias"] for r in recs]
    result = dict(
        T=sched.T, replications=cfg.replications, gamma_events=len(recs),
        max_relative_residual=max((r["relative_residual"] for r in recs), default=math.nan),
        xi_mean=float(np.mean(xi)) if len(xi) else math.nan,
        xi_std=float(np.std(xi, ddof=1)) if len(xi) > 1 else math.nan,
        ks_statistic=ks[0], ks_pvalue=ks[1],
        bias_mean=float(np.mean(bias)) if bias else math.nan,
        bias_bound=model.M * sched.h,
        report=rep.summary(),
    )
    _emit(cfg, result, rep.rows())
    return result


_DISPATCH = dict(simulate=cmd_simulate, estimate=cmd_estimate, risk=cmd_risk, study=cmd_study,
                 oracle=cmd_oracle, diagnose=cmd_diagnose)


def _error(record: dict, code: int) -> int:
    sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")
    return code


def run(cfg: RunConfig) -> int:
    """Execute ``cfg``; returns the process exit status."""
    try:
        cfg.validate()
    except ConfigError as exc:
        return _error(dict(error="invalid-config", field=exc.field, message=str(exc)), 2)
    t0 = time.time()
    try:
        _DISPATCH[cfg.command](cfg)
    except ReplicationError as exc:
        return _error(dict(exc.record(), error="replication-failed"), 1)
    except Exception as exc:
        return _error(dict(error="runtime", type=type(exc).__name__, message=str(exc),
                           master_seed=cfg.master_seed), 1)
    if cfg.output:
        meta = dict(started=time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(t0)),
                    seconds=time.time() - t0, version=__version__,
                    python=platform.python_version(), numpy=np.__version__)
        _write_text(str(cfg.output) + ".meta.json", json.dumps(meta, indent=1) + "\n")
    return 0


def main(argv=None) -> int:
    try:
        cfg = resolve_config(argv)
    except ConfigError as exc:
        return _error(dict(error="invalid-config", field=exc.field, message=str(exc)), 2)
    except FileNotFoundError as exc:
        return _error(dict(error="invalid-config", field="config", message=str(exc)), 2)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
