import math

import numpy as np
import pytest
from numpy.polynomial import chebyshev

from geohmc.harmonic import (
    STABLE,
    UNSTABLE,
    WEAKLY_UNSTABLE,
    StepMatrix,
    Unstable,
    cot_ratio,
    harmonic_step_matrix,
    multivariate_energy_bound,
    phmc_rho_closed,
    phmc_rho_from_matrix,
    phmc_stable,
    phmc_step_matrix,
    reference_matrix,
    rho,
    rho_two_stage_closed,
    rotation_params,
    stability_interval,
    step_entries,
    sup_rho,
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

LIBRARY = [
    velocity_verlet(),
    position_verlet(),
    two_stage(0.2),
    blanes_two_stage(),
    three_stage(0.3, 0.12),
    blanes_three_stage(),
    verlet_concat(3),
]


@pytest.mark.parametrize("h", [0.1, 0.7, 1.3, 1.9])
def test_verlet_entries(h):
    m = harmonic_step_matrix(velocity_verlet(), h)
    assert m.a == pytest.approx(1 - h * h / 2, abs=1e-15)
    assert m.d == pytest.approx(1 - h * h / 2, abs=1e-15)
    assert m.b == pytest.approx(h, abs=1e-15)
    assert m.c == pytest.approx(-h + h**3 / 4, abs=1e-15)
    pv = harmonic_step_matrix(position_verlet(), h)
    assert (pv.a, pv.b, pv.c) == pytest.approx((1 - h * h / 2, h - h**3 / 4, -h), abs=1e-15)


def test_zero_step_is_identity():
    for s in LIBRARY:
        m = harmonic_step_matrix(s, 1e-300)
        assert (m.a, m.b, m.c, m.d) == pytest.approx((1, 0, 0, 1), abs=1e-15)


@pytest.mark.parametrize("scheme", LIBRARY, ids=lambda s: s.name)
def test_unit_determinant_and_reversible_symmetry(scheme):
    h_max = stability_interval(scheme).h_max
    hs = np.linspace(h_max / 200, h_max * (1 - 1e-6), 200)
    a, b, c, d = step_entries(scheme, hs)
    np.testing.assert_allclose(a * d - b * c, 1.0, atol=1e-12)
    np.testing.assert_allclose(a, d, atol=1e-12)


def test_lie_trotter_not_reversible():
    m = harmonic_step_matrix(lie_trotter(), 0.5)
    assert abs(m.a - m.d) > 0.1
    assert m.det == pytest.approx(1.0, abs=1e-15)


def test_euler_grows_and_midpoint_is_stable():
    e = reference_matrix("euler", 1.0)
    assert np.abs(np.linalg.eigvals(e.as_array())) == pytest.approx([math.sqrt(2)] * 2)
    for h in (0.3, 2.0, 10.0, 1e3):
        assert np.linalg.norm(reference_matrix("euler", h).as_array() @ [1.0, 0.0]) == pytest.approx(
            math.sqrt(1 + h * h))
        mid = reference_matrix("midpoint", h)
        assert abs(mid.a) < 1
        assert mid.det == pytest.approx(1.0)
    with pytest.raises(ValueError):
        reference_matrix("rk4", 0.1)


def test_rotation_params_verlet():
    rp = rotation_params(harmonic_step_matrix(velocity_verlet(), 1.0))
    assert rp.stable == STABLE
    assert rp.theta == pytest.approx(math.pi / 3, abs=1e-15)
    assert rp.chi**2 == pytest.approx(4 / 3, abs=1e-14)
    m = harmonic_step_matrix(velocity_verlet(), 1.0)
    assert rp.chi * math.sin(rp.theta) == pytest.approx(m.b, abs=1e-12)
    assert rotation_params(harmonic_step_matrix(velocity_verlet(), 2.5)).stable == UNSTABLE
    assert rotation_params(harmonic_step_matrix(velocity_verlet(), 2.0)).stable == WEAKLY_UNSTABLE


def test_degenerate_identity_case_is_flagged():
    rp = rotation_params(StepMatrix(-1.0, 0.0, 0.0, -1.0))
    assert rp.stable == STABLE and rp.degenerate and rp.theta == pytest.approx(math.pi)
    # two Verlet half steps with theta = pi/2 each compose to -I
    h = 2 * math.sqrt(2)
    assert rotation_params(harmonic_step_matrix(verlet_concat(2), h)).degenerate
    assert rho(verlet_concat(2), h) == pytest.approx(rho(velocity_verlet(), h / 2), rel=1e-5)


@pytest.mark.parametrize("h, expected", [(1.0, 1 / 24), (0.5, 1 / 480)])
def test_verlet_rho_values(h, expected):
    assert rho(velocity_verlet(), h) == pytest.approx(expected, rel=1e-12)


def test_rho_vanishes_as_h_shrinks():
    for s in LIBRARY:
        assert rho(s, 1e-3) < 1e-10


def test_rho_raises_when_unstable():
    with pytest.raises(Unstable):
        rho(velocity_verlet(), 2.5)


@pytest.mark.parametrize("b", [0.19, 0.2, (3 - math.sqrt(3)) / 6, 0.23, 0.25])
@pytest.mark.parametrize("h", [0.05, 0.5, 1.0, 1.7, 2.4])
def test_two_stage_closed_form_matches_matrix(b, h):
    closed = rho_two_stage_closed(b, h)
    assert closed == pytest.approx(rho(two_stage(b), h), rel=1e-9, abs=1e-15)
    assert abs(closed - rho(two_stage(b), h)) <= 1e-10


@pytest.mark.parametrize("h", [0.3, 1.0, 2.0, 2.8])
def test_two_stage_quarter_equals_verlet_at_half_step(h):
    assert rho_two_stage_closed(0.25, h) == pytest.approx(rho(velocity_verlet(), h / 2), rel=1e-10)


def test_two_stage_closed_form_instability():
    with pytest.raises(Unstable):
        rho_two_stage_closed(0.2, 3.2)


def test_sup_rho_examples():
    assert 3e-4 <= sup_rho(blanes_two_stage(), 2) <= 7e-4
    assert 3e-2 <= sup_rho(two_stage(0.25), 2) <= 5e-2
    assert 5e-5 <= sup_rho(blanes_three_stage(), 3) <= 9e-5
    assert sup_rho(velocity_verlet(), 2.5) == math.inf
    assert sup_rho(blanes_three_stage(), 1e-3) < 1e-12
    with pytest.raises(ValueError):
        sup_rho(velocity_verlet(), 1.0, grid=10)


def test_refined_sup_rho_finds_narrow_windows():
    # perturbing the minimax coefficients opens a window narrower than the grid spacing
    s = three_stage(0.2962, 0.1189)
    assert math.isfinite(sup_rho(s, 3.0))
    assert sup_rho(s, 3.0, refine=True) == math.inf


def test_stability_intervals():
    vv = stability_interval(velocity_verlet(), tol=1e-12)
    assert vv.h_max == pytest.approx(2.0, abs=1e-10)
    assert vv.boundary == -1 and not vv.censored
    for n in (2, 3, 4, 5):
        assert stability_interval(verlet_concat(n)).h_max == pytest.approx(2.0 * n, abs=1e-8)
    three = stability_interval(blanes_three_stage())
    assert three.h_max == pytest.approx(4.67, abs=0.05)
    censored = stability_interval(velocity_verlet(), scan_limit=1.5)
    assert censored.censored and censored.h_max == 1.5


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_chebyshev_identity(n):
    hs = np.linspace(0.0, 2.0 * n, 401)
    a, *_ = step_entries(verlet_concat(n), hs)
    tn = chebyshev.chebval(1 - hs**2 / (2 * n * n), [0] * n + [1])
    np.testing.assert_allclose(a, tn, atol=1e-12)


def test_multivariate_bound():
    vv = velocity_verlet()
    assert multivariate_energy_bound(vv, [1.0], 0.7) == rho(vv, 0.7)
    assert multivariate_energy_bound(vv, [1.0, 10.0], 0.15) == pytest.approx(rho(vv, 0.15) + rho(vv, 1.5))
    with pytest.raises(Unstable, match="mode 1"):
        multivariate_energy_bound(vv, [1.0, 20.0], 0.15)


@pytest.mark.parametrize("n", [1, 3, 7])
@pytest.mark.parametrize("h", [0.4, 1.1, 1.8])
def test_mean_energy_error_after_n_steps(n, h):
    """``E(Delta) = sin^2(n theta) rho`` under the stationary law, exactly and by Monte Carlo."""
    vv = velocity_verlet()
    mn = harmonic_step_matrix(vv, h).power(n)
    theta = rotation_params(harmonic_step_matrix(vv, h)).theta
    expected = math.sin(n * theta) ** 2 * rho(vv, h)
    assert 0.5 * np.trace(mn.T @ mn - np.eye(2)) == pytest.approx(expected, rel=1e-10, abs=1e-14)
    x = np.random.default_rng(n).standard_normal((200_000, 2))
    y = x @ mn.T
    delta = 0.5 * (np.sum(y * y, axis=1) - np.sum(x * x, axis=1))
    se = delta.std(ddof=1) / math.sqrt(len(delta))
    assert abs(delta.mean() - expected) < 3 * se + 1e-12


def test_cot_ratio_series_and_limit():
    assert cot_ratio(0.0) == pytest.approx(1 / 3)
    for z in (9e-3, 1.1e-2, 0.3, 2.0):
        assert cot_ratio(z) == pytest.approx((1 - z / math.tan(z)) / z**2, rel=1e-10)


PHMC_GRID = [
    (c, omega, h)
    for c in (0.0, 0.25, 0.5, 0.8, 1.0)
    for omega in (0.7, 3.0, 10.0, 100.0)
    for h in (0.1, 0.8, 1.5)
    if phmc_stable(c, omega, h)
]


@pytest.mark.parametrize("c, omega, h", PHMC_GRID)
def test_phmc_closed_form_matches_matrix(c, omega, h):
    closed = phmc_rho_closed(c, omega, h)
    assert abs(closed - phmc_rho_from_matrix(c, omega, h)) <= 1e-9 * max(1.0, closed)


def test_phmc_matrix_is_symplectic():
    for c, w, h in [(0.0, 2.0, 0.5), (0.5, 3.0, 1.2), (1.0, 10.0, 2.0)]:
        m = phmc_step_matrix(c, w, h)
        assert m.det == pytest.approx(1.0, abs=1e-12)


def test_phmc_c_zero_closed_form():
    w, h = 2.0, 0.5
    r = 0.25 * (1 + w**-2) ** 2
    expected = 0.5 * h**4 * r**2 / ((1 + w**-2) * (1 + w**-2 - h * h * r))
    assert phmc_rho_closed(0.0, w, h) == pytest.approx(expected, rel=1e-14)


def test_phmc_stability_conditions():
    assert phmc_stable(0.0, 1.0, math.sqrt(2) - 1e-9)
    assert not phmc_stable(0.0, 1.0, math.sqrt(2) + 1e-9)
    # c = 1 tends to h < pi as omega grows
    assert phmc_stable(1.0, 1e6, math.pi - 1e-3)
    assert not phmc_stable(1.0, 1e6, math.pi + 1e-3)
    with pytest.raises(Unstable):
        phmc_rho_closed(1.0, 1.0, 3.0)
