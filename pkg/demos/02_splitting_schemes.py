"""Two- and three-stage splittings and choosing their parameters.

Run with ``python3 demos/02_splitting_schemes.py``.
"""

# %% Compare the energy error bound of several schemes at equal cost
import numpy as np

from geohmc.harmonic import rho, stability_interval, sup_rho
from geohmc.integrators import PhaseState, aia_select_b, estimate_order, optimize_three_stage
from geohmc.schemes import blanes_three_stage, blanes_two_stage, two_stage, velocity_verlet
from geohmc.targets import double_well

schemes = {
    "verlet": velocity_verlet(),
    "two_stage(1/4)": two_stage(0.25),
    "blanes_two_stage": blanes_two_stage(),
    "blanes_three_stage": blanes_three_stage(),
}
for name, s in schemes.items():
    # h is per stage so that the force budget is the same for every row
    hs = s.stages * np.array([0.3, 0.6, 0.9])
    vals = ", ".join(f"{rho(s, h):.2e}" for h in hs)
    print(f"{name:>20}: stages={s.stages} interval={stability_interval(s).h_max:.3f} rho={vals}")

# %% Worst-case bound over a step range
print("sup rho, two stage, c=2:", sup_rho(blanes_two_stage(), 2), sup_rho(two_stage(0.25), 2))
print("sup rho, three stage, c=3:", sup_rho(blanes_three_stage(), 3))

# %% Adaptive parameter choice for a given step size range
for c in (0.5, 1.0, 2.0, 3.0):
    print(f"c={c}: b={aia_select_b(c):.5f}")
fit = optimize_three_stage(3.0)
print("three stage optimum:", fit)

# %% Empirical order on a nonlinear target
start = PhaseState(np.array([1.0]), np.array([0.5]))
est = estimate_order(double_well(1).system, blanes_two_stage(), start, [0.05, 0.1, 0.2, 0.4])
print("order estimate:", est)
