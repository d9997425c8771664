"""HMC against MALA on a correlated two-dimensional Gaussian.

Both use the same force budget.  Run with
``python3 demos/03_bivariate_hmc_vs_mala.py``.
"""

# %% Acceptance over many short chains started in the tail
from geohmc.experiments import bivariate_acceptance

res = bivariate_acceptance(n_seeds=100)
for name, r in res.items():
    print(f"{name:>4}: mean acceptance {r['acceptance']:.3f} +- {r['se']:.3f} over {r['transitions']:.0f} transitions per chain")

# %% A single HMC chain, inspected transition by transition
import numpy as np

from geohmc.sampler import ChainConfig, make_rng, run_chain
from geohmc.schemes import velocity_verlet
from geohmc.targets import bivariate_example

target = bivariate_example()
out = run_chain(target, velocity_verlet(), ChainConfig(lam=1.35, h=0.15), np.array([9.0, 9.0]), 20,
                rng=make_rng(1), keep_records=True)
for k, rec in enumerate(out.records[:5]):
    print(k, np.round(rec.state.q, 3), f"dH={rec.delta_H:+.3e}", "accepted" if rec.accepted else "rejected")
