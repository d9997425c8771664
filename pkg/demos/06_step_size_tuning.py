"""Choosing the step size from the high-dimensional acceptance law.

Run with ``python3 demos/06_step_size_tuning.py``.
"""

# %% The efficiency-optimal acceptance rate does not depend on the target
from geohmc.tuning import acceptance_limit, estimate_sigma, optimal_acceptance, scaling_experiment, tune_h

for nu in (1, 2, 4):
    print(f"nu={nu}: optimal acceptance {optimal_acceptance(nu):.4f}")
print("limit at ell=1, Sigma=0.77:", acceptance_limit(1.0, 2, 0.77))

# %% Estimate the target constant from stationary energy errors
from geohmc.sampler import make_rng
from geohmc.schemes import velocity_verlet
from geohmc.targets import standard_normal

rng = make_rng(4)
mom = estimate_sigma(standard_normal(1), velocity_verlet(), 1.0, 2, 0.1, 100_000, rng)
print(f"Sigma_hat {mom.Sigma_hat:.4f} +- {mom.Sigma_se:.4f}, nu_hat {mom.nu_hat:.2f}")

# %% Acceptance of m independent copies with h = ell m^(-1/4)
rows, _ = scaling_experiment(standard_normal(1), velocity_verlet(), 2.0, 2, [1, 16, 256], 2.0, 20_000, rng)
for r in rows:
    print(f"m={r.m:4d} h={r.h:.3f} acceptance {r.acceptance:.3f} predicted {r.predicted:.3f}")

# %% Tune a single chain to the default target rate
res = tune_h(standard_normal(1), velocity_verlet(), 2.0, rng=rng)
print(f"tuned h={res.h:.3f}, acceptance {res.acceptance:.3f} in {res.ci}")
