"""Geometric integrators and Hamiltonian Monte Carlo.

Splitting schemes and their harmonic-oscillator analysis, HMC-family
samplers, preconditioned path sampling and step-size tuning.
"""

from .harmonic import (
    RotationParams,
    StepMatrix,
    Unstable,
    harmonic_step_matrix,
    multivariate_energy_bound,
    phmc_rho_closed,
    reference_matrix,
    rho,
    rho_two_stage_closed,
    rotation_params,
    stability_interval,
    sup_rho,
)
from .integrators import (
    LegResult,
    PhaseState,
    SeparableSystem,
    aia_select_b,
    drift,
    estimate_order,
    kick,
    leg,
)
from .schemes import SplittingScheme, named_scheme, scheme_from_spec
from .targets import GaussianTarget, ProductTarget, double_well, quartic
from .sampler import ChainConfig, RunStats, TransitionRecord, run_chain

__version__ = "0.1.0"
