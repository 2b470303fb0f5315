"""Pointwise certificates and the realized cost.

The HJI residual vanishes for every law, the barrier condition holds at
unit gain, and along a closed loop with no disturbance the realized cost
telescopes to ``4 h(x0)``.  Adding a constant offset to the control can
only lower it.  Sontag's weight is finite everywhere, so its penalties
are finite; the inverse-optimal weight is infinite wherever the override
is off, which makes any deviation there cost ``-inf``.
"""
import numpy as np

from issf_margins.certify import hji_check, realized_costs, zbf_check
from issf_margins.filters import FilterKind
from issf_margins.scenarios import get_scenario

sc = get_scenario("disk2d")
for kind in FilterKind:
    rep = hji_check(sc.plant, sc.barrier, sc.nominal, kind, sc.box, n=500)
    print(f"HJI {kind.value:>18}: worst |residual| {abs(rep.worst_residual):.1e}  passed={rep.passed}")

ex3 = get_scenario("example3")
for sigma in (1.0, 1.2):
    rep = zbf_check(ex3.plant, ex3.barrier, ex3.closed_loop_u(), ex3.box, 200, sigma=sigma)
    print(f"barrier condition on example3 at sigma={sigma}: worst {rep.worst_residual:+.3f} passed={rep.passed}")

x0 = np.array([[0.0, 0.5]] * 4)
offsets = np.array([[0.0, 0.0], [0.3, 0.0], [0.0, -0.5], [1.0, 1.0]])
print("4 h(x0) =", 4 * float(sc.barrier.h(x0[:1])[0]))
for kind in (FilterKind.SONTAG, FilterKind.INVERSE_OPTIMAL):
    accs = realized_costs(sc.plant, sc.barrier, kind, sc.nominal, x0, horizon=5.0, control_offsets=offsets)
    print(kind.value, " ".join(f"{off}: {a.total:.5f}" for off, a in zip(offsets, accs)))
