"""Comparison functions and their Legendre-Fenchel transforms.

The disturbance term in every filter is ``l_gamma(2 |L_g1 h|)``, where
``l_gamma`` is the conjugate of a class-K-infinity gain ``gamma``.  This
script evaluates the built-in gains, checks the conjugate twice over and
shows Young's inequality becoming tight at the stationary pair.
"""
import numpy as np

from issf_margins.comparison import BUILTIN_GAMMAS, lf_scaled, lf_transform, young_gap

r = np.array([0.1, 1.0, 10.0])
for name, make in sorted(BUILTIN_GAMMAS.items()):
    g = make()
    lf = lf_transform(g)
    back = lf_transform(lf.as_comparison())
    print(f"{name:>14}: gamma(r) = {np.round(g(r), 6)}")
    print(f"{'':>14}  l_gamma(r) = {np.round(lf(r), 6)}")
    print(f"{'':>14}  max |l_l_gamma - gamma| = {np.max(np.abs(back(r) - g(r))):.2e}")

# scaling law: the transform of a*gamma is a * l_gamma(r / a)
g = BUILTIN_GAMMAS["quadratic_half"]()
for a in (0.5, 2.0, 4.0):
    print(f"a = {a}: l(a gamma)(1) = {lf_scaled(g, a, 1.0):.6f}")

# Young: gamma(|x|) + l_gamma(|y|) >= x.y, equality when y = gamma'(|x|) x/|x|
x = np.array([0.6, -0.8])
y_star = float(g.derivative(1.0)) * x
print("gap at the stationary pair:", f"{young_gap(g, x, y_star):.2e}")
print("gap at a random pair:      ", f"{young_gap(g, x, np.array([0.3, 0.9])):.4f}")
