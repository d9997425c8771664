"""Ready-made experiment drivers shared by the CLI, demos and acceptance tests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .integrators import PhaseState, leg
from .sampler import ChainConfig, mala_config, run_chain, spawn_rngs
from .schemes import SplittingScheme, velocity_verlet
from .targets import bivariate_example, standard_normal

PERIOD = 2.0 * math.pi

# step fraction of the period -> (error after one period, after ten periods)
TABLE1_REFERENCE = {
    4: (6.49e-1, 2.00e0),
    8: (1.60e-1, 1.48e0),
    16: (4.03e-2, 4.00e-1),
    32: (1.01e-2, 1.01e-1),
}


def period_relative_error(h: float, periods: int, scheme: SplittingScheme | None = None) -> float:
    """Relative phase-space error on the unit oscillator from ``(1, 0)`` after whole periods.

    The number of steps is ``round(periods * 2 pi / h)``; the exact solution
    at that time is used as reference.
    """
    scheme = velocity_verlet() if scheme is None else scheme
    sys = standard_normal(1)
    n = int(round(periods * PERIOD / h))
    res = leg(sys, scheme, h, n, PhaseState(np.array([1.0]), np.array([0.0])))
    t = n * h
    exact = np.array([math.cos(t), -math.sin(t)])
    num = np.array([res.final.q[0], res.final.p[0]])
    if res.diverged:
        # the leg stops at the divergence threshold; rerun without the guard
        num = _unguarded_verlet(scheme, h, n)
    return float(np.linalg.norm(num - exact) / np.linalg.norm(exact))


def _unguarded_verlet(scheme: SplittingScheme, h: float, n: int) -> np.ndarray:
    from .harmonic import harmonic_step_matrix

    m = harmonic_step_matrix(scheme, h).as_array()
    return np.linalg.matrix_power(m, n) @ np.array([1.0, 0.0])


@dataclass(frozen=True)
class Table1Row:
    divisor: int
    h: float
    one_period: float
    ten_periods: float


def table1() -> list[Table1Row]:
    """Velocity Verlet errors on the oscillator for ``h = T/4, T/8, T/16, T/32``."""
    rows = []
    for k in sorted(TABLE1_REFERENCE):
        h = PERIOD / k
        rows.append(Table1Row(k, h, period_relative_error(h, 1), period_relative_error(h, 10)))
    return rows


def round_sig(x: float, sig: int = 3) -> float:
    if x == 0 or not math.isfinite(x):
        return x
    return round(x, sig - 1 - int(math.floor(math.log10(abs(x)))))


def bivariate_acceptance(n_seeds: int = 200, seed: int = 2024, budget: int = 100,
                         h: float = 0.15, lam: float = 1.35, start=(9.0, 9.0),
                         cache_force: bool = True) -> dict:
    """Mean acceptance probability of HMC and MALA from ``start`` under a force budget.

    Each seed runs one chain for as many transitions as the budget allows;
    the per-chain mean of ``min(1, exp(-dH))`` is averaged over seeds.
    """
    target = bivariate_example()
    scheme = velocity_verlet()
    out = {}
    for name, cfg in (("hmc", ChainConfig(lam, h)), ("mala", mala_config(h))):
        rates, transitions = [], []
        for rng in spawn_rngs(seed, n_seeds):
            res = run_chain(target, scheme, cfg, np.array(start, dtype=float), 10**6, rng=rng,
                            force_budget=budget, cache_force=cache_force)
            rates.append(res.stats.mean_accept_prob)
            transitions.append(res.stats.n)
        out[name] = {"acceptance": float(np.mean(rates)),
                     "se": float(np.std(rates, ddof=1) / math.sqrt(n_seeds)),
                     "transitions": float(np.mean(transitions))}
    return out
