import numpy as np
import pytest
from hypothesis import settings

from ergodrift.models import make_model

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

# (drift, diffusion, x_star) triples covering every catalog entry
CATALOG = [
    ("ou(1)", "const_sigma(1)", None),
    ("ou(2)", "smooth_sigma(0.5,1)", None),
    ("tanh_drift(0.5,1.5)", "const_sigma(0.7)", 2.0),
]


@pytest.fixture(scope="session")
def ou():
    return make_model("ou(1)", "const_sigma(1)")


@pytest.fixture(scope="session", params=CATALOG, ids=lambda c: f"{c[0]}|{c[1]}")
def catalog_model(request):
    d, s, xs = request.param
    return make_model(d, s, x_star=xs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ----------------------------------------------------------

ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
