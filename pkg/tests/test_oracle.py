import math
from types import SimpleNamespace

import numpy as np
import pytest
from numba import njit
from scipy import integrate

from ergodrift.models import ModelTheta, ModelViolationError, make_model
from ergodrift.oracle import (InvariantDensity, deviation_statistic, density_oracle,
                              ergodic_mean, invariant_density, moment_bound, moment_constants,
                              window_indicator)
from ergodrift.sde import simulate_path


def ou_closed_form(x, theta=1.0, sigma=1.0):
    v = sigma ** 2 / (2 * theta)
    return np.exp(-x * x / (2 * v)) / math.sqrt(2 * math.pi * v)


def quad_density(model, x):
    """Independent oracle: nested scipy quad, no tabulation."""
    r = lambda v: 2 * float(model.drift(v)) / float(model.diffusion(v)) ** 2
    st = lambda u: integrate.quad(r, 0.0, u, epsabs=1e-13, epsrel=1e-13)[0]
    un = lambda u: math.exp(st(u)) / float(model.diffusion(u)) ** 2
    Z = integrate.quad(un, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    return un(x) / Z


def test_ou_matches_closed_form(ou):
    x = np.linspace(-4, 4, 801)
    assert np.max(np.abs(invariant_density(ou, x) - ou_closed_form(x))) < 1e-8
    assert invariant_density(ou, 0.0) == pytest.approx(1 / math.sqrt(math.pi), abs=1e-12)


def test_ou_other_parameters():
    m = make_model("ou(2)", "const_sigma(0.5)")
    x = np.linspace(-1, 1, 101)
    assert np.max(np.abs(invariant_density(m, x) - ou_closed_form(x, 2.0, 0.5))) < 1e-8


def test_symmetry(ou):
    x = np.linspace(0, 4, 41)
    assert np.allclose(invariant_density(ou, x), invariant_density(ou, -x), rtol=0, atol=1e-15)


def test_mass_and_unit_mean(catalog_model):
    dens = density_oracle(catalog_model)
    assert abs(dens.total_mass() - 1) < 1e-8
    assert abs(ergodic_mean(catalog_model, lambda x: np.ones_like(x)) - 1) < 1e-8
    assert 0 < dens.normalizer < math.inf


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("x", [-1.3, 0.0, 0.4, 2.2])
def test_against_quadrature_oracle(catalog_model, x):
    assert invariant_density(catalog_model, x) == pytest.approx(quad_density(catalog_model, x),
                                                                rel=1e-8)


def test_erf_window(ou):
    f = window_indicator(0.0, 1.0)
    assert ergodic_mean(ou, f, points=f.points) == pytest.approx(math.erf(1), abs=1e-10)


@pytest.mark.parametrize("h", [0.2, 0.1, 0.05])
def test_small_window_taylor(ou, h):
    f = window_indicator(0.0, h)
    ratio = ergodic_mean(ou, f, points=f.points) / (2 * h * invariant_density(ou, 0.0))
    assert abs(ratio - 1) <= h * h / 3 * 1.05  # q''(0)/q(0) = -2 gives -h^2/3


def test_cut_doubling_stable(catalog_model):
    base = density_oracle(catalog_model)
    big = InvariantDensity(catalog_model, domain_cut=2 * base.domain_cut)
    x = np.linspace(-3, 3, 61)
    assert np.max(np.abs(big(x) - base(x))) < base.tol


def test_density_bounds_on_grid(catalog_model):
    dens = density_oracle(catalog_model)
    xs = np.linspace(-dens.domain_cut, dens.domain_cut, 20001)
    q = dens(xs)
    assert np.all(np.isfinite(q)) and q.max() < 10
    assert dens(np.linspace(-1, 1, 201)).min() > 1e-3  # double-well member dips to ~2e-3


def test_outside_domain_raises(ou):
    dens = density_oracle(ou)
    with pytest.raises(ValueError):
        dens(dens.domain_cut * 1.01)


def test_non_integrable_tail_detected():
    @njit
    def zero(x):
        return 0.0 * x

    @njit
    def one(x):
        return 1.0 + 0.0 * x

    m = ModelTheta(drift=zero, drift_derivative=zero, diffusion=one, L=2.0, M=1.0, x_star=1.0,
                   sigma_min=1.0, sigma_max=1.0)
    with pytest.raises(ModelViolationError):
        InvariantDensity(m)


def test_divergent_mean_detected(ou):
    with pytest.raises(ModelViolationError):
        ergodic_mean(ou, lambda x: np.exp(x * x))


def test_moment_constants_examples(ou):
    c = moment_constants(SimpleNamespace(L=1.0, M=1.0, x_star=1.0, sigma_max=1.0))
    assert c.D_star == 33.0
    assert c.A(1, 0.0) == 33.0
    assert c.A(2, 1.0) == 3 * 34.0 ** 2
    assert c.B_star(1, 0.0) == 33.0 * 33.0
    assert c.B1_star(1, 0.0) == 1 + c.B_star(2, 0.0)
    k = moment_constants(ou)
    assert moment_bound(ou, 1, 0.0) == pytest.approx(k.D_star * ou.L)
    with pytest.raises(ValueError):
        moment_bound(ou, 0, 0.0)


def test_deviation_statistic(ou):
    p = simulate_path(ou, 20.0, 0.01, seed=5)
    const = lambda y: np.full_like(np.asarray(y, dtype=float), 3.0)
    assert deviation_statistic(p, ou, const, centre=3.0) == 0.0
    assert abs(deviation_statistic(p, ou, const)) < 1e-12 * p.N
    chi = window_indicator(0.0, 0.3)
    m = ergodic_mean(ou, chi, points=chi.points)
    for n in (1, 17, p.N):
        step = deviation_statistic(p, ou, chi, n, centre=m) - \
            deviation_statistic(p, ou, chi, n - 1, centre=m)
        assert step == pytest.approx(float(chi(p.values[n])) - m, abs=1e-9)
    with pytest.raises(ValueError):
        deviation_statistic(p, ou, chi, p.N + 1)
