import math
import warnings
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergodrift.estimator import (ScheduleOverrideWarning, SequentialEstimator,
                                 UnsupportedModeError, decompose_error, density_preestimate,
                                 estimate_drift, make_schedule, stopping_rule, stopping_time,
                                 threshold, truncate_density, weight_from_prefix)
from ergodrift.sde import PathSample, iter_path_chunks, simulate_path


# -- schedule -----------------------------------------------------------------------

def test_schedule_T1000():
    s = make_schedule(1000, 0.5, 0.75, 1.5)
    assert s.delta == pytest.approx(5.50e-5, rel=1e-3)
    assert s.N == pytest.approx(1.82e7, rel=2e-3)
    assert s.h == pytest.approx(0.17783, abs=1e-5)
    assert s.epsilon_T == pytest.approx(0.05508, abs=1e-5)
    assert s.a0 == pytest.approx((math.sqrt(1.5) - 1) / 10) == pytest.approx(0.022474, abs=1e-6)
    assert s.upsilon_T == pytest.approx(math.log(1000) ** -s.a0)
    assert s.N0 == math.ceil(s.N ** 0.75) and 1 < s.N0 < s.N
    assert s.varsigma_T < 1000 ** (-0.75 / 2)
    assert s.a0_override is None and dict(s.overrides) == {}


def test_schedule_h_power_of_two():
    assert make_schedule(256, beta=1.5).h == 0.25


def test_schedule_overrides_recorded():
    with pytest.warns(ScheduleOverrideWarning):
        s = make_schedule(50, overrides=dict(delta=0.01, a0=1.0))
    assert s.delta == 0.01 and s.N == 5000 and s.a0_override == 1.0
    assert s.overrides == {"delta": 0.01, "a0": 1.0}
    assert s.upsilon_T == pytest.approx(1 / math.log(50))


@pytest.mark.parametrize("kw", [dict(T=2.9), dict(T=100, gamma0=0.6), dict(T=100, gamma=1.0),
                                dict(T=100, beta=2.0)])
def test_schedule_invalid(kw):
    with pytest.raises(ValueError):
        make_schedule(**kw)


def test_schedule_gamma0_flag():
    s = make_schedule(100, gamma0=0.6, overrides=dict(allow_gamma0=True))
    assert s.gamma0 == 0.6 and s.overrides == {"allow_gamma0": True}
    with pytest.raises(ValueError, match="unknown"):
        make_schedule(100, overrides=dict(bandwidth=0.1))


# -- pre-estimate, truncation, threshold ------------------------------------------------

def small_schedule(**ov):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ScheduleOverrideWarning)
        return make_schedule(10, overrides=dict(delta=0.01, **ov))


def test_preestimate_trivial_cases():
    s = small_schedule()
    inside = np.zeros(s.N + 1)
    assert density_preestimate(inside, s) == s.N0 / (2 * (s.N0 - 1) * s.varsigma_T)
    assert density_preestimate(inside + 1.0, s) == 0.0
    with pytest.raises(ValueError):
        density_preestimate(inside, small_schedule(N0=1))
    with pytest.raises(ValueError):
        density_preestimate(inside[:s.N0 - 1], s)


def test_truncation_branches():
    assert truncate_density(0.5, 0.04) == 0.5
    assert truncate_density(0.1, 0.04) == pytest.approx(0.2)
    assert truncate_density(10, 0.04) == pytest.approx(5)
    with pytest.raises(ValueError):
        truncate_density(0.5, 1.0)


@given(q=st.floats(0, 1e6, allow_nan=False), u=st.floats(1e-6, 0.999))
def test_truncation_band(q, u):
    t = truncate_density(q, u)
    assert math.sqrt(u) <= t <= 1 / math.sqrt(u) * (1 + 1e-15)


def test_threshold_example():
    s = SimpleNamespace(h=0.1, N=100, N0=10, upsilon_T=0.04)
    assert threshold(0.6, s) == pytest.approx(10.44)
    lo = threshold(math.sqrt(0.04), s)
    assert lo == pytest.approx(0.1 * 90 * (2 * 0.2 - 0.04)) and lo > 0


# -- stopping rule ----------------------------------------------------------------------

def test_stopping_rule_example():
    r = stopping_rule([1, 0, 1, 1], 2.5, N0=4)
    assert (r.stop_index, r.kappa, r.gamma_event) == (7, 0.5, True)
    assert list(r.weights()) == [1, 1, 1, 0.5]


def test_integer_threshold_exact_hit():
    r = stopping_rule(np.ones(10), 6.0)
    assert r.stop_index == 5 and r.kappa == 1.0


def test_stopping_rule_overflow_and_errors():
    r = stopping_rule([1, 0, 0], 3.2, N0=2)    # N = 4, one hit
    assert not r.gamma_event and r.kappa == 1.0
    assert r.stop_index == 4 + math.ceil(3.2 - 1) <= r.N + math.ceil(r.H)
    assert r.weight(r.stop_index + 1) == 0.0
    with pytest.raises(ValueError):
        stopping_rule([1, 1], 0.0)


# -- synthetic paths ----------------------------------------------------------------------

def synthetic_path(seed, scale, N=1000, delta=0.01):
    rng = np.random.default_rng(seed)
    y = np.cumsum(np.concatenate([[rng.normal(0, 0.5)], rng.normal(0, scale, N)]))
    return PathSample(delta=delta, values=y, seed=seed)


def brute_force(path, s, H):
    """Direct evaluation of the estimate from full arrays."""
    y = np.asarray(path.values)
    j = np.arange(s.N0, s.N + 1)
    chi = (np.abs(y[j - 1] - s.x0) <= s.h).astype(float)
    c = np.cumsum(chi)
    w = np.where(c < H, 1.0, 0.0)
    k = np.searchsorted(c, H)
    if k < len(c):
        w[k] = H - (c[k - 1] if k else 0.0)
    dy = y[j] - y[j - 1]
    gamma = k < len(c)
    return (np.sum(w * chi * dy) / (s.delta * H) if gamma else 0.0), w, chi, gamma


@settings(max_examples=80)
@given(seed=st.integers(0, 2 ** 32), scale=st.floats(0.01, 0.3), x0=st.floats(-1, 1),
       frac=st.floats(0.05, 1.3))
def test_estimator_properties(seed, scale, x0, frac):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ScheduleOverrideWarning)
        s = make_schedule(10, x0=x0, overrides=dict(delta=0.01))
    p = synthetic_path(seed, scale)
    H = frac * (s.N - s.N0) * 0.3 + 0.37
    out = estimate_drift(p, s, injected_threshold=H, chunk_size=97)
    ref, w, chi, gamma = brute_force(p, s, H)
    assert out.gamma_event == gamma
    assert out.stop_index <= s.N + math.ceil(H)
    if gamma:
        assert 0 < out.kappa <= 1
        assert abs(out.weight_checksum - H) <= 1e-9 * H
        assert float(np.sum(w * chi)) == pytest.approx(H, rel=1e-9)
        assert out.estimate == pytest.approx(ref, rel=1e-9, abs=1e-12)
    else:
        assert out.estimate == 0.0 and out.kappa == 1.0
    r = stopping_time(p, s, H)
    assert (r.stop_index, r.gamma_event) == (out.stop_index, out.gamma_event)
    assert r.kappa == pytest.approx(out.kappa, abs=1e-12)
    ws = r.weights()
    assert np.all(ws[np.arange(s.N0, s.N + 1) > r.stop_index] == 0)
    # prefix measurability on a sample of indices up to the stop
    last = min(r.stop_index, s.N)
    for j in {s.N0, last, (s.N0 + last) // 2, max(s.N0, last - 1)}:
        assert weight_from_prefix(p.values[:j], s, j, H=H) == pytest.approx(r.weight(j), abs=1e-12)


def test_prefix_measurability_with_preestimate():
    s = small_schedule(a0=1.0)
    p = synthetic_path(3, 0.05)
    out = estimate_drift(p, s)
    r = stopping_time(p, s, out.H_T)
    for j in range(s.N0, min(r.stop_index, s.N) + 1, 7):
        # the suffix of the path is scrambled: the weight must not notice
        tail = np.random.default_rng(j).normal(size=s.N + 1 - j)
        scrambled = np.concatenate([p.values[:j], tail])
        assert weight_from_prefix(scrambled, s, j) == r.weight(j)


def test_chunking_invariance():
    s = small_schedule(a0=1.0)
    p = synthetic_path(11, 0.05)
    a = estimate_drift(p, s, chunk_size=1 << 20)
    for size in (1, 2, 13, s.N0, s.N):
        b = estimate_drift(p, s, chunk_size=size)
        assert (b.stop_index, b.kappa, b.q_hat, b.H_T) == (a.stop_index, a.kappa, a.q_hat, a.H_T)
        assert b.estimate == pytest.approx(a.estimate, rel=1e-12)


def test_test_mode_example():
    with pytest.warns(ScheduleOverrideWarning):
        s = make_schedule(5, overrides=dict(delta=1.0, h=1.0, N0=1))
    assert (s.N, s.N0) == (5, 1)
    p = PathSample(delta=1.0, values=np.array([0.0, 0.3, 0.6, 0.9, 1.2, 1.5]), seed=0)
    out = estimate_drift(p, s, injected_threshold=3.0)
    assert (out.stop_index, out.kappa, out.gamma_event) == (3, 1.0, True)
    assert out.estimate == pytest.approx(0.3, abs=1e-15)


def test_injected_q_tilde_sets_threshold():
    s = small_schedule()
    p = synthetic_path(1, 0.05)
    out = estimate_drift(p, s, injected_q_tilde=0.7)
    assert out.H_T == threshold(0.7, s) and math.isnan(out.q_hat)


def test_shift_equivariance():
    """Same driver, drift shifted by c, same threshold: estimate moves by exactly c."""
    s = small_schedule(h=50.0)
    p = synthetic_path(5, 0.05)
    c = 0.37
    q = PathSample(delta=s.delta, values=p.values + c * s.delta * np.arange(s.N + 1), seed=0)
    H = 300.25
    a = estimate_drift(p, s, injected_threshold=H)
    b = estimate_drift(q, s, injected_threshold=H)
    assert a.gamma_event and b.gamma_event
    assert b.estimate - a.estimate == pytest.approx(c, abs=1e-9)


def test_path_schedule_mismatch():
    s = small_schedule()
    p = synthetic_path(1, 0.05)
    with pytest.raises(ValueError, match="delta"):
        estimate_drift(PathSample(delta=0.02, values=p.values, seed=0), s)
    with pytest.raises(ValueError, match="N="):
        estimate_drift(PathSample(delta=0.01, values=p.values[:-2], seed=0), s)


def test_streaming_checks_order():
    s = small_schedule()
    e = SequentialEstimator(s)
    chunks = list(synthetic_path(1, 0.05).chunks(100))
    e.feed(chunks[0])
    with pytest.raises(ValueError):
        e.feed(chunks[2])


def test_decompose_requires_brownian(ou):
    s = make_schedule(20, overrides=dict(a0=1.0))
    p = simulate_path(ou, 20, s.delta, seed=1)
    with pytest.raises(UnsupportedModeError):
        decompose_error(p, s, None, ou)


@pytest.mark.parametrize("spec", [("ou(1)", "const_sigma(1)", None),
                                  ("ou(2)", "smooth_sigma(0.5,1)", None)])
def test_decomposition_identity(spec):
    from ergodrift.models import make_model
    m = make_model(*spec[:2], x_star=spec[2])
    s = make_schedule(50, overrides=dict(a0=1.0))
    for seed in range(3):
        p = simulate_path(m, 50, s.delta, substeps=4, seed=seed, record_brownian=True)
        out = estimate_drift(p, s)
        d = decompose_error(p, s, out, m)
        if d.gamma_event:
            assert d.relative_residual < 1e-8
            assert d.error == pytest.approx(out.estimate - float(m.drift(0.0)))
            assert abs(d.bias) <= m.M * s.h


# -- Monte Carlo examples ------------------------------------------------------------------

def test_preestimate_ou_mean(ou):
    """q_hat at the T=1000 schedule averages to 1/sqrt(pi) within 0.02.

    Per-path sd of q_hat is ~0.165, so 100 paths leave an MC error of ~0.0165;
    400 stationary-start paths bring it to ~0.008.
    """
    s = make_schedule(1000, overrides=dict(a0=1.0))
    qs = []
    for i in range(400):
        vals = np.concatenate([c.values for c in iter_path_chunks(
            ou, s.N0 * s.delta, s.delta, seed=2, stream=(i,), burn_in=20.0)])
        qs.append(density_preestimate(vals, s))
    assert abs(np.mean(qs) - 1 / math.sqrt(math.pi)) < 0.02


@pytest.mark.slow
def test_ou_estimate_unbiased(ou):
    from ergodrift.risk import pointwise_risk_mc
    s = make_schedule(500, overrides=dict(a0=1.0))
    rep = pointwise_risk_mc(ou, s, 500, master_seed=17)
    est = [r["estimate"] for r in rep.records[0]]
    assert -0.03 <= np.mean(est) <= 0.03


def test_bias_term_small_for_linear_drift(ou):
    from ergodrift.risk import pointwise_risk_mc
    s = make_schedule(200, overrides=dict(a0=1.0))
    rep = pointwise_risk_mc(ou, s, 100, master_seed=23, diagnostic=True)
    b = [r["bias"] for r in rep.records[0] if r["gamma_event"]]
    assert abs(np.mean(b)) < 0.1 * ou.M * s.h
    assert max(abs(v) for v in b) <= ou.M * s.h
