"""Verlet on the harmonic oscillator: stability window and energy error.

Run with ``python3 demos/01_harmonic_stability.py``.
"""

# %% Step matrix and rotation parameters
import math

import numpy as np

from geohmc.experiments import period_relative_error, table1
from geohmc.harmonic import harmonic_step_matrix, rho, rotation_params, stability_interval
from geohmc.schemes import velocity_verlet

scheme = velocity_verlet()
for h in (0.5, 1.9, 2.0, 2.1):
    m = harmonic_step_matrix(scheme, h)
    rp = rotation_params(m)
    print(f"h={h}: A_h={np.round(m.as_array(), 4).tolist()} -> {rp.stable}")

# %% Energy error bound rho(h) = h^4 / (32 (1 - h^2/4)) on the stable window
print("stability interval:", stability_interval(scheme).h_max)
for h in (0.25, 0.5, 1.0, 1.5):
    print(f"rho({h}) = {rho(scheme, h):.4e}   closed form {h**4 / (32 * (1 - h**2 / 4)):.4e}")

# %% Relative error after one and ten periods
print(f"{'step':>5} {'1 period':>10} {'10 periods':>11}")
for row in table1():
    print(f"T/{row.divisor:<3} {row.one_period:10.3e} {row.ten_periods:11.3e}")

# %% Past the stability limit the error grows geometrically
print("h = pi:", period_relative_error(math.pi, 1), period_relative_error(math.pi, 10))
