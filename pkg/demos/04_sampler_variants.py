"""Sampler variants on one Gaussian target.

Run with ``python3 demos/04_sampler_variants.py``.
"""

# %% Many independent chains of each variant, compared with the exact moments
import math

import numpy as np

from geohmc.sampler import ChainConfig, make_rng, mala_config, run_chains
from geohmc.schemes import blanes_two_stage
from geohmc.targets import GaussianTarget

target = GaussianTarget(np.diag([1.0, 4.0]))
rng = make_rng(0)
variants = {
    "hmc": ChainConfig(lam=1.2, h=0.3),
    "randomized steps": ChainConfig(lam=1.2, h=0.3, duration_mode="geometric_steps"),
    "uniform h": ChainConfig(lam=1.2, h=0.3, duration_mode="uniform_h"),
    "generalized": ChainConfig(lam=0.6, h=0.3, ghmc_phi=math.pi / 4),
    "extra chance": ChainConfig(lam=1.2, h=0.3, xhmc_K=2),
    "mala": mala_config(0.3),
}
print("exact variances:", np.diag(target.covariance))
for name, cfg in variants.items():
    qs, alphas, _ = run_chains(target, blanes_two_stage(), cfg, target.sample(rng, (200,)), 300, rng)
    print(f"{name:>17}: acceptance {alphas.mean():.3f}  var {np.round((qs**2).mean(axis=(0, 1)), 3)}")

# %% Exact flow: half-period durations decorrelate the chain completely
from geohmc.sampler import run_chain
from geohmc.targets import standard_normal

std = standard_normal(1)
res = run_chain(std, None, ChainConfig(lam=math.pi / 2, h=0.1), np.zeros(1), 20_000, rng=rng, exact=True)
print("lag-1 autocorrelation:", res.stats.autocorrelation(1))
