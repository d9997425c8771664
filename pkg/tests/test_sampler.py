import math

import numpy as np
import pytest

from geohmc.integrators import PhaseState, leg
from geohmc.sampler import (
    ChainConfig,
    RunStats,
    exact_hmc_transition,
    geometric_steps,
    ghmc_refresh,
    hmc_transition,
    make_rng,
    mala_config,
    run_chain,
    run_chains,
    spawn_rngs,
    steps_for,
    transition,
    xhmc_transition,
)
from geohmc.schemes import blanes_two_stage, lie_trotter, position_verlet, velocity_verlet
from geohmc.targets import GaussianTarget, bivariate_example, standard_normal

TARGET = GaussianTarget(np.diag([1.0, 4.0]))


def test_steps_for_guards_representation_error():
    assert steps_for(1.35, 0.15) == 9
    assert steps_for(1.0, 0.3) == 3
    assert mala_config(0.15).n_steps == 1


def test_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(lam=0.1, h=0.2)
    with pytest.raises(ValueError):
        ChainConfig(lam=1.0, h=0.1, duration_mode="poisson")
    with pytest.raises(ValueError):
        ChainConfig(lam=1.0, h=0.1, ghmc_phi=0.0)
    with pytest.raises(ValueError):
        ChainConfig(lam=1.0, h=0.1, xhmc_K=-1)


def test_refresh_covariance():
    M = np.array([[2.0, 0.3], [0.3, 0.5]])
    t = GaussianTarget(np.eye(2), M)
    p = t.mass_sample(make_rng(0), (200_000,))
    np.testing.assert_allclose(np.cov(p.T), M, atol=0.01)


def test_ghmc_refresh_preserves_momentum_law():
    t = standard_normal(2)
    rng = make_rng(1)
    p = rng.standard_normal((200_000, 2))
    out = ghmc_refresh(t, p, math.pi / 5, rng)
    np.testing.assert_allclose(np.cov(out.T), np.eye(2), atol=0.01)
    assert np.corrcoef(p[:, 0], out[:, 0])[0, 1] == pytest.approx(math.cos(math.pi / 5), abs=0.01)
    with pytest.raises(ValueError):
        ghmc_refresh(t, p, 0.0, rng)


def test_determinism():
    cfg = ChainConfig(lam=1.0, h=0.2, seed=42)
    a = run_chain(TARGET, velocity_verlet(), cfg, np.zeros(2), 200)
    b = run_chain(TARGET, velocity_verlet(), cfg, np.zeros(2), 200)
    np.testing.assert_array_equal(a.samples, b.samples)
    c = run_chain(TARGET, velocity_verlet(), ChainConfig(lam=1.0, h=0.2, seed=43), np.zeros(2), 200)
    assert not np.array_equal(a.samples, c.samples)


def test_spawned_generators_differ():
    r1, r2 = spawn_rngs(7, 2)
    assert r1.random() != r2.random()
    assert spawn_rngs(7, 2)[0].random() == spawn_rngs(7, 2)[0].random()


def test_rejection_flips_momentum_exactly():
    # h = 1.9 on a frequency-2 mode is unstable, so the leg diverges and is rejected
    cfg = ChainConfig(lam=19.0, h=1.9)
    s = PhaseState(np.array([1.0, 1.0]), np.zeros(2))
    rec = hmc_transition(TARGET, velocity_verlet(), cfg, s, make_rng(0))
    assert not rec.accepted and rec.accept_prob == 0.0
    np.testing.assert_array_equal(rec.state.q, s.q)
    xi = TARGET.mass_sample(make_rng(0), ())
    np.testing.assert_array_equal(rec.state.p, -xi)


def test_non_palindromic_rejected():
    with pytest.raises(ValueError, match="palindromic"):
        hmc_transition(TARGET, lie_trotter(), ChainConfig(lam=1, h=0.1), PhaseState(np.zeros(2), np.zeros(2)),
                       make_rng(0))


def test_geometric_steps_mean():
    rng = make_rng(3)
    draws = np.array([geometric_steps(2.0, 0.25, rng) for _ in range(40_000)])
    assert draws.min() >= 1
    assert draws.mean() == pytest.approx(8.0, abs=4 * draws.std() / math.sqrt(len(draws)))


def test_uniform_h_with_zero_delta_is_hmc():
    s = PhaseState(np.array([0.5, -0.2]), np.zeros(2))
    a = transition(TARGET, velocity_verlet(), ChainConfig(lam=1.0, h=0.2), s, make_rng(5))
    b = transition(TARGET, velocity_verlet(), ChainConfig(lam=1.0, h=0.2, duration_mode="uniform_h", delta=0.0),
                   s, make_rng(5))
    np.testing.assert_array_equal(a.state.q, b.state.q)


def test_full_angle_ghmc_is_hmc():
    s = PhaseState(np.array([0.5, -0.2]), np.array([3.0, 3.0]))
    cfg = ChainConfig(lam=1.0, h=0.2, ghmc_phi=math.pi / 2)
    a = hmc_transition(TARGET, velocity_verlet(), cfg, s, make_rng(5))
    b = hmc_transition(TARGET, velocity_verlet(), cfg, PhaseState(s.q, -s.p), make_rng(5))
    np.testing.assert_array_equal(a.state.q, b.state.q)


def test_xhmc_envelope_monotone_and_zero_extra_is_hmc():
    rng = make_rng(9)
    s = PhaseState(rng.standard_normal((500, 2)), np.zeros((500, 2)))
    cfg0 = ChainConfig(lam=1.0, h=0.45)
    a = xhmc_transition(TARGET, velocity_verlet(), cfg0, s, make_rng(1))
    gammas = [a.accept_prob]
    for K in (1, 3):
        cfg = ChainConfig(lam=1.0, h=0.45, xhmc_K=K)
        gammas.append(xhmc_transition(TARGET, velocity_verlet(), cfg, s, make_rng(1)).accept_prob)
    assert np.all(gammas[1] >= gammas[0]) and np.all(gammas[2] >= gammas[1])
    assert np.mean(gammas[2]) > np.mean(gammas[0])
    h = hmc_transition(TARGET, velocity_verlet(), cfg0, s, make_rng(1))
    np.testing.assert_array_equal(a.state.q, h.state.q)


def test_exact_hmc_half_period_anticorrelation():
    t = standard_normal(1)
    q0 = np.array([0.7])
    rec = exact_hmc_transition(t, math.pi, PhaseState(q0, np.zeros(1)), make_rng(0))
    assert rec.state.q == pytest.approx(-q0, abs=1e-12)
    with pytest.raises(TypeError):
        exact_hmc_transition(velocity_verlet(), 1.0, PhaseState(q0, q0), make_rng(0))


VARIANTS = {
    "hmc": (ChainConfig(lam=1.2, h=0.3), False),
    "rhmc": (ChainConfig(lam=1.2, h=0.3, duration_mode="geometric_steps"), False),
    "uniform_h": (ChainConfig(lam=1.2, h=0.3, duration_mode="uniform_h", delta=0.2), False),
    "ghmc": (ChainConfig(lam=0.6, h=0.3, ghmc_phi=math.pi / 4), False),
    "xhmc": (ChainConfig(lam=1.2, h=0.3, xhmc_K=2), False),
    "mala": (mala_config(0.3), False),
    "exact": (ChainConfig(lam=1.2, h=0.3), True),
    "exact_randomized": (ChainConfig(lam=1.2, h=0.3, duration_mode="geometric_steps"), True),
}


@pytest.mark.parametrize("name", list(VARIANTS))
def test_stationarity_moments(name):
    """First and second moments within 4 standard errors of the target values."""
    cfg, exact = VARIANTS[name]
    rng = make_rng(100)
    n_chains, n_steps = 400, 300
    init = TARGET.sample(rng, (n_chains,))
    qs, alphas, _ = run_chains(TARGET, blanes_two_stage(), cfg, init, n_steps, rng, exact=exact)
    var = np.diag(TARGET.covariance)
    for stat, target in ((qs, np.zeros(2)), (qs**2, var)):
        per_chain = stat.mean(axis=0)
        se = per_chain.std(axis=0, ddof=1) / math.sqrt(n_chains)
        assert np.all(np.abs(per_chain.mean(axis=0) - target) < 4 * se), (name, per_chain.mean(axis=0), se)
    assert 0 < alphas.mean() <= 1


@pytest.mark.parametrize("h", [0.3, 0.6, 0.9])
def test_mean_energy_error_nonnegative(h):
    t = standard_normal(1)
    rng = make_rng(int(h * 10))
    x = PhaseState(t.sample(rng, (100_000,)), rng.standard_normal((100_000, 1)))
    dH = leg(t, velocity_verlet(), h, 3, x).delta_H
    se = dH.std(ddof=1) / math.sqrt(len(dH))
    assert dH.mean() > -3 * se


def test_position_verlet_far_start_is_stuck():
    """From q0 = 10 with h*omega beyond the stability limit every proposal is rejected."""
    t = bivariate_example()
    cfg = ChainConfig(lam=1.35, h=0.3)
    res = run_chain(t, position_verlet(), cfg, np.array([10.0, 10.0]), 50, rng=make_rng(0))
    assert res.stats.acceptance_rate == 0.0
    np.testing.assert_array_equal(res.samples, 10.0)


def test_force_budget_and_cache():
    t = bivariate_example()
    cfg = ChainConfig(lam=1.35, h=0.15)
    plain = run_chain(t, velocity_verlet(), cfg, np.array([9.0, 9.0]), 1000, rng=make_rng(0), force_budget=100)
    assert plain.stats.n == 10 and plain.stats.n_force_evals == 100
    cached = run_chain(t, velocity_verlet(), cfg, np.array([9.0, 9.0]), 1000, rng=make_rng(0), force_budget=100,
                       cache_force=True)
    assert cached.stats.n == 11 and cached.stats.n_force_evals <= 100
    mala = run_chain(t, velocity_verlet(), mala_config(0.15), np.array([9.0, 9.0]), 1000, rng=make_rng(0),
                     force_budget=100, cache_force=True)
    assert mala.stats.n == 99


def test_runstats_merge_matches_pooled():
    rng = make_rng(2)
    a, b = rng.standard_normal((300, 3)), rng.standard_normal((500, 3)) + 1.0
    sa, sb = RunStats(3), RunStats(3)
    for x in a:
        sa.push(x)
    for x in b:
        sb.push(x)
    m = sa.merge(sb)
    pooled = np.vstack([a, b])
    np.testing.assert_allclose(m.mean, pooled.mean(0), atol=1e-12)
    np.testing.assert_allclose(m.variance, pooled.var(0, ddof=1), atol=1e-12)
    assert m.n == 800


def test_runstats_autocorrelation_of_exact_quarter_period():
    t = standard_normal(1)
    res = run_chain(t, None, ChainConfig(lam=math.pi / 2, h=0.1), np.zeros(1), 20_000, rng=make_rng(0), exact=True)
    assert abs(res.stats.autocorrelation(1)) < 0.04
    assert res.stats.summary()["n_transitions"] == 20_000
