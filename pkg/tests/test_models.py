import math

import numpy as np
import pytest

from ergodrift.models import (ModelTheta, ModelViolationError, make_model, model_from_spec,
                              parse_spec)


def test_parse_spec():
    assert parse_spec("ou(1)") == ("ou", (1.0,))
    assert parse_spec(" tanh_drift( 0.5 , 1.5 ) ") == ("tanh_drift", (0.5, 1.5))
    with pytest.raises(ValueError):
        parse_spec("1ou")


def test_ou_class_constants(ou):
    assert ou.x_star == 1.0
    assert ou.L > 1 and ou.M == pytest.approx(2.0)
    assert ou.sigma_min == ou.sigma_max == 1.0
    assert ou.has_exact_sampler
    assert ou.class_violations(x0=0.0) == []


def test_catalog_members_in_class(catalog_model):
    assert catalog_model.class_violations() == []
    x = catalog_model.default_grid()
    assert len(x) == 4096 and x[-1] == pytest.approx(3 * catalog_model.x_star)


def test_derivatives_match_finite_differences(catalog_model):
    x = np.linspace(-4, 4, 41)
    h = 1e-6
    fd = (catalog_model.drift(x + h) - catalog_model.drift(x - h)) / (2 * h)
    assert np.allclose(fd, catalog_model.drift_derivative(x), atol=1e-7)


def test_tanh_drift_needs_larger_x_star():
    # S' = 1.5 sech^2 - 0.5 is still positive just beyond |x| = 1
    with pytest.raises(ModelViolationError):
        make_model("tanh_drift(0.5,1.5)", "const_sigma(1)")


def test_spec_round_trip(catalog_model):
    m2 = model_from_spec(catalog_model.spec)
    assert (m2.L, m2.M, m2.x_star, m2.sigma_max) == (catalog_model.L, catalog_model.M,
                                                    catalog_model.x_star, catalog_model.sigma_max)
    x = np.linspace(-3, 3, 7)
    assert np.array_equal(m2.drift(x), catalog_model.drift(x))


def test_violation_report_names_constraint(ou):
    x = ou.default_grid()
    bad = ModelTheta(drift=ou.drift, drift_derivative=ou.drift_derivative,
                     diffusion=ou.diffusion, L=1.01, M=0.5, x_star=1.0,
                     sigma_min=1.0, sigma_max=1.0)
    msgs = bad.class_violations(x)
    assert len(msgs) == 1 and "M=0.5" in msgs[0]
    assert bad.class_violations(x, x0=0.5)[0].startswith("x_star")


@pytest.mark.parametrize("kw", [dict(L=1.0), dict(M=0.0), dict(sigma_min=2.0)])
def test_invalid_constants(ou, kw):
    base = dict(drift=ou.drift, drift_derivative=ou.drift_derivative, diffusion=ou.diffusion,
                L=2.0, M=2.0, x_star=1.0, sigma_min=1.0, sigma_max=1.0)
    base.update(kw)
    with pytest.raises(ValueError):
        ModelTheta(**base)


def test_unknown_catalog_names():
    with pytest.raises(ValueError, match="unknown drift"):
        make_model("cubic(1)")
    with pytest.raises(ValueError, match="unknown diffusion"):
        make_model("ou(1)", "wild_sigma(1)")


def test_smooth_sigma_bounds():
    m = make_model("ou(2)", "smooth_sigma(0.5,1)")
    x = np.linspace(-20, 20, 20001)
    s = m.diffusion(x)
    assert s.min() >= m.sigma_min and s.max() <= m.sigma_max
    assert not m.has_exact_sampler
    assert math.isclose(float(m.diffusion(0.0)), 1.5)
