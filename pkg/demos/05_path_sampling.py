"""Sampling discretized Ornstein-Uhlenbeck bridge paths.

The preconditioned integrator treats the Gaussian reference exactly, so
its acceptance does not degrade as the path is refined.  Run with
``python3 demos/05_path_sampling.py``.
"""

# %% Energy error against refinement for two preconditioning weights
import numpy as np

from geohmc.paths import (
    energy_error_stats,
    ou_energy_errors,
    ou_exact_covariance,
    ou_exact_sample,
    ou_model,
    relative_l2,
    run_phmc,
)
from geohmc.sampler import make_rng

rng = make_rng(3)
for c in (1.0, 0.0):
    for d in (49, 99, 199):
        est = energy_error_stats(ou_energy_errors(ou_model(1.0, d, c=c), 1.0, 5.0, 5000, rng))
        print(f"c={c} d={d:4d}: E(dH) = {est.best[0]:.3e} +- {est.best[1]:.1e}")

# %% A sampling run, with the marginal variances checked against the exact bridge
model = ou_model(1.0, 49, c=1.0)
res = run_phmc(model, 2.0, 20.0, 200, rng, n_chains=200, init=ou_exact_sample(model, rng, (200,)))
exact = np.diag(ou_exact_covariance(model))
print(f"acceptance {res.acceptance:.3f}, variance rel L2 error {relative_l2(res.variance, exact):.2%}")
