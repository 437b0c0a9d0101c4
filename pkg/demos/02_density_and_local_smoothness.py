#!/usr/bin/env python3
# Stationary densities of the catalog models and the weak Hoelder modulus of a
# drift perturbed by the local bump family.

import math
import numpy as np

from ergodrift import make_model, omega_modulus
from ergodrift.holder import PerturbationFamily, build_perturbation, perturbation_profile
from ergodrift.oracle import density_oracle, ergodic_mean, window_indicator

models = {
    "OU": make_model("ou(1)", "const_sigma(1)"),
    "OU, state-dependent sigma": make_model("ou(2)", "smooth_sigma(0.5,1)"),
    "double well": make_model("tanh_drift(0.5,1.5)", "const_sigma(0.7)", x_star=2.0),
}

xs = np.linspace(-2, 2, 9)
for name, m in models.items():
    q = density_oracle(m)
    print(f"{name:28s} mass={q.total_mass():.12f}  q(x):", np.round(q(xs), 4))

# OU stationary law is N(0, 1/2): P(|y| <= 1) = erf(1)
chi = window_indicator(0.0, 1.0)
print("P(|y|<=1):", ergodic_mean(models["OU"], chi, points=chi.points), "vs", math.erf(1))

# The bump V_nu has V(0) = 1 and integral 2, and its even part integrates to 0
# against any window centred at x0 -- so it shifts S(x0) at no smoothness cost.
V = perturbation_profile(0.1)
print("V(0) =", V(0.0))
ou = models["OU"]
fam = PerturbationFamily(base_drift=ou.drift, nu=0.1, u=1.0, h=0.2, x0=0.0, phi_T=4.0)
S = build_perturbation(fam)
print("S(0) moves from", float(ou.drift(0.0)), "to", float(S(0.0)))
print("modulus of the perturbation:",
      omega_modulus(lambda x: S(x) - ou.drift(x), 0.0, 0.2, breakpoints=fam.breakpoints))
print("modulus of x^2 at h=0.3:", omega_modulus(lambda x: x * x, 0.0, 0.3), "(2h^2/3 = 0.06)")
