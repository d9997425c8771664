import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geohmc.integrators import (
    DIVERGENCE_THRESHOLD,
    NotPositiveDefinite,
    PhaseState,
    SeparableSystem,
    aia_select_b,
    drift,
    estimate_order,
    kick,
    leg,
    leg_flows,
    optimize_three_stage,
)
from geohmc.schemes import (
    blanes_three_stage,
    blanes_two_stage,
    lie_trotter,
    position_verlet,
    three_stage,
    two_stage,
    velocity_verlet,
    verlet_concat,
)
from geohmc.targets import bivariate_example, double_well, quartic, standard_normal

PALINDROMIC = [
    velocity_verlet(),
    position_verlet(),
    two_stage(0.21),
    blanes_two_stage(),
    blanes_three_stage(),
    verlet_concat(3),
]


def _state(*qp):
    q, p = qp
    return PhaseState(np.atleast_1d(np.asarray(q, float)), np.atleast_1d(np.asarray(p, float)))


def test_drift_examples():
    sys = standard_normal(1)
    s = _state(0.0, 1.0)
    assert drift(sys, 0.0, s).q == pytest.approx([0.0])
    assert drift(sys, 2.0, s).q == pytest.approx([2.0])
    two = drift(sys, 0.3, drift(sys, 0.4, _state(0.5, -1.2)))
    assert two.q == pytest.approx(drift(sys, 0.7, _state(0.5, -1.2)).q, abs=1e-15)


def test_drift_uses_inverse_mass():
    sys = SeparableSystem(lambda q: 0.5 * np.sum(q * q, -1), lambda q: -q, 2, mass=[2.0, 4.0])
    out = drift(sys, 1.0, PhaseState(np.zeros(2), np.array([2.0, 2.0])))
    assert out.q == pytest.approx([1.0, 0.5])


@pytest.mark.parametrize("q, h", [(0.5, 0.1), (1.3, 0.4), (-2.0, 1.0)])
def test_quartic_kick(q, h):
    sys = quartic().system
    out = kick(sys, h / 2, _state(q, 0.7))
    assert out.p == pytest.approx([0.7 - (h / 2) * q**3], abs=1e-15)
    assert out.q == pytest.approx([q])


def test_kick_standard_normal():
    out = kick(standard_normal(1), 1.0, _state(1.0, 0.0))
    assert out.p == pytest.approx([-1.0])
    assert kick(standard_normal(1), 0.0, _state(1.0, 0.3)).p == pytest.approx([0.3])


@pytest.mark.parametrize("m, expected", [(32, 1.01e-1)])
def test_leg_ten_periods(m, expected):
    h = 2 * math.pi / m
    res = leg(standard_normal(1), velocity_verlet(), h, 10 * m, _state(1.0, 0.0))
    err = math.hypot(res.final.q[0] - 1.0, res.final.p[0])
    assert err == pytest.approx(expected, rel=5e-3)


def test_leg_at_pi_one_period():
    res = leg(standard_normal(1), velocity_verlet(), math.pi, 2, _state(1.0, 0.0))
    err = math.hypot(res.final.q[0] - 1.0, res.final.p[0])
    assert err == pytest.approx(46.4, rel=0.01)


@pytest.mark.parametrize("scheme", PALINDROMIC, ids=lambda s: s.name)
def test_merged_matches_unmerged(scheme):
    sys = double_well(3).system
    rng = np.random.default_rng(3)
    s = PhaseState(rng.standard_normal(3), rng.standard_normal(3))
    a = leg(sys, scheme, 0.1, 25, s, merge=True)
    b = leg(sys, scheme, 0.1, 25, s, merge=False)
    np.testing.assert_allclose(a.final.q, b.final.q, atol=1e-12)
    np.testing.assert_allclose(a.final.p, b.final.p, atol=1e-12)
    assert a.delta_H == pytest.approx(b.delta_H, abs=1e-12)


@pytest.mark.parametrize("scheme", PALINDROMIC, ids=lambda s: s.name)
@pytest.mark.parametrize("n", [1, 4, 13])
def test_force_counts(scheme, n):
    sys = standard_normal(2)
    s = _state([0.3, -0.2], [1.0, 0.5])
    kicks_outside = scheme.coeffs[0][0] == "B"
    res = leg(sys, scheme, 0.1, n, s)
    assert res.n_force_evals == scheme.stages * n + (1 if kicks_outside else 0)
    if kicks_outside:
        cached = leg(sys, scheme, 0.1, n, s, force0=sys.force(s.q))
        assert cached.n_force_evals == scheme.stages * n
        np.testing.assert_array_equal(cached.final.q, res.final.q)
        np.testing.assert_allclose(res.force_final, sys.force(res.final.q), atol=1e-15)


def test_leg_flows_merging():
    flows = leg_flows(velocity_verlet(), 3)
    assert [lab for lab, _ in flows] == ["B", "A", "B", "A", "B", "A", "B"]
    assert [x for _, x in flows] == pytest.approx([0.5, 1, 1, 1, 1, 1, 0.5])
    assert len(leg_flows(velocity_verlet(), 3, merge=False)) == 9


def test_leg_preconditions():
    s = _state(0.0, 1.0)
    with pytest.raises(ValueError):
        leg(standard_normal(1), velocity_verlet(), 0.0, 1, s)
    with pytest.raises(ValueError):
        leg(standard_normal(1), velocity_verlet(), 0.1, 0, s)


def test_divergence_is_infinite_energy_error():
    sys = quartic().system
    res = leg(sys, velocity_verlet(), 1.0, 50, _state(20.0, 0.0))
    assert res.diverged and res.delta_H == math.inf
    np.testing.assert_array_equal(res.final.q, [20.0])
    batch = PhaseState(np.array([[20.0], [0.1]]), np.zeros((2, 1)))
    out = leg(sys, velocity_verlet(), 1.0, 50, batch)
    assert out.diverged.tolist() == [True, False]
    assert out.delta_H[0] == math.inf and np.isfinite(out.delta_H[1])
    assert DIVERGENCE_THRESHOLD == 1e10


def _systems():
    return [("double_well", double_well(2).system), ("gaussian", bivariate_example())]


@pytest.mark.parametrize("name, sys", _systems())
@pytest.mark.parametrize("scheme", PALINDROMIC, ids=lambda s: s.name)
def test_reversibility(name, sys, scheme):
    rng = np.random.default_rng(11)
    h = 0.05 if name == "gaussian" else 0.2
    for _ in range(5):
        s = PhaseState(rng.standard_normal(2), rng.standard_normal(2))
        fwd = leg(sys, scheme, h, 7, s).final
        back = leg(sys, scheme, h, 7, fwd.flipped()).final.flipped()
        np.testing.assert_allclose(back.q, s.q, atol=1e-10)
        np.testing.assert_allclose(back.p, s.p, atol=1e-10)


def _jacobian(sys, scheme, h, n, x, eps=1e-6):
    d = len(x) // 2

    def f(z):
        out = leg(sys, scheme, h, n, PhaseState(z[:d], z[d:])).final
        return np.concatenate([out.q, out.p])

    J = np.empty((2 * d, 2 * d))
    for i in range(2 * d):
        e = np.zeros(2 * d)
        e[i] = eps
        J[:, i] = (f(x + e) - f(x - e)) / (2 * eps)
    return J


@pytest.mark.parametrize("name, sys", _systems())
@pytest.mark.parametrize("scheme", [velocity_verlet(), blanes_three_stage(), lie_trotter()],
                         ids=lambda s: s.name)
def test_volume_preservation(name, sys, scheme):
    rng = np.random.default_rng(5)
    h = 0.05 if name == "gaussian" else 0.2
    for _ in range(3):
        J = _jacobian(sys, scheme, h, 5, rng.standard_normal(4))
        assert np.linalg.det(J) == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(
    q=st.floats(-2.5, 2.5), p=st.floats(-2.5, 2.5),
    n=st.integers(1, 10), h=st.floats(0.01, 0.5),
)
def test_energy_error_antisymmetry(q, p, n, h):
    sys = double_well(1).system
    res = leg(sys, blanes_two_stage(), h, n, _state(q, p))
    back = leg(sys, blanes_two_stage(), h, n, res.final.flipped())
    assert back.delta_H == pytest.approx(-res.delta_H, abs=1e-10)


@pytest.mark.parametrize("h", [0.1, 0.5, 1.0, 1.5, 1.9])
def test_pointwise_verlet_bound(h):
    sys = standard_normal(1)
    grid = np.linspace(-3, 3, 13)
    q0, p0 = np.meshgrid(grid, grid)
    s = PhaseState(q0.reshape(-1, 1), p0.reshape(-1, 1))
    bound = h * h / (8 * (1 - h * h / 4)) * p0.ravel() ** 2
    for n in (1, 2, 5, 17):
        dH = leg(sys, velocity_verlet(), h, n, s).delta_H
        assert np.all(dH <= bound + 1e-12)


def test_aia_examples():
    assert aia_select_b(2.0) == pytest.approx(0.21178, abs=1e-4)
    for c in (2 * math.sqrt(2), 3.0, 3.9):
        assert aia_select_b(c) == pytest.approx(0.25, abs=1e-12)
    with pytest.raises(ValueError):
        aia_select_b(4.0)
    with pytest.raises(ValueError):
        aia_select_b(0.0)


def test_aia_monotone_in_c():
    bs = [aia_select_b(c) for c in (0.5, 1.0, 1.5, 2.0, 2.5)]
    assert all(x <= y + 1e-6 for x, y in zip(bs, bs[1:]))


def test_three_stage_optimizer_recovers_coefficients():
    fit = optimize_three_stage(3.0)
    assert fit.a == pytest.approx(0.29619504261126, abs=1e-4)
    assert fit.b == pytest.approx(0.11888010966548, abs=1e-4)
    assert 5e-5 <= fit.sup_rho <= 9e-5


@pytest.mark.parametrize(
    "scheme, nu",
    [(velocity_verlet(), 2), (lie_trotter(), 1), (blanes_two_stage(), 2)],
    ids=["verlet", "lie_trotter", "blanes_two_stage"],
)
def test_estimate_order(scheme, nu):
    sys = standard_normal(1)
    est = estimate_order(sys, scheme, _state(0.8, 0.6), [0.02, 0.04, 0.08, 0.16])
    assert est.reliable
    assert est.nu == pytest.approx(nu, abs=0.1)


def test_estimate_order_needs_four_sizes():
    with pytest.raises(ValueError):
        estimate_order(standard_normal(1), velocity_verlet(), _state(1.0, 0.0), [0.1, 0.2])


def test_force_check():
    rng = np.random.default_rng(0)
    assert double_well(3).system.force_check(rng) < 1e-6
    wrong = SeparableSystem(lambda q: 0.5 * np.sum(q * q, -1), lambda q: q, 2)
    assert wrong.force_check(rng) > 1.0


def test_mass_validation():
    u, f = (lambda q: 0.5 * np.sum(q * q, -1)), (lambda q: -q)
    with pytest.raises(NotPositiveDefinite):
        SeparableSystem(u, f, 2, mass=[[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NotPositiveDefinite):
        SeparableSystem(u, f, 2, mass=[1.0, -1.0])
    sys = SeparableSystem(u, f, 2, mass=[[2.0, 0.5], [0.5, 1.0]])
    p = np.array([0.3, -0.7])
    assert sys.mass_apply(p) == pytest.approx(np.linalg.solve(sys.mass, p))


def test_mass_sample_covariance():
    M = np.array([[2.0, 0.5], [0.5, 1.0]])
    sys = SeparableSystem(lambda q: 0.5 * np.sum(q * q, -1), lambda q: -q, 2, mass=M)
    xs = sys.mass_sample(np.random.default_rng(1), (200_000,))
    np.testing.assert_allclose(np.cov(xs.T), M, atol=0.02)
