"""Closed-form analysis of splitting integrators on the harmonic oscillator.

Every reversible, volume preserving one-step method applied to
``dq/dt = p, dp/dt = -q`` advances ``(q, p)`` by a fixed 2x2 matrix

    [[A_h, B_h],
     [C_h, D_h]]

with ``A_h D_h - B_h C_h = 1`` and ``A_h = D_h``.  For stable step sizes the
matrix is a rotation by ``theta_h`` in coordinates stretched by ``chi_h``;
``rho(h) = (chi_h - 1/chi_h)**2 / 2`` then bounds the expected energy error at
stationarity.  Since ``sin(theta_h)**2 = -B_h C_h`` we evaluate
``chi_h**2 = -B_h / C_h`` and ``rho = (B_h + C_h)**2 / (-2 B_h C_h)`` directly,
which avoids the ``arccos`` cancellation near ``h = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np

from .schemes import DRIFT, SplittingScheme, two_stage

STABLE = "stable"
WEAKLY_UNSTABLE = "weakly_unstable"
UNSTABLE = "unstable"

# |A_h| within this distance of 1 is treated as the boundary case.
_EDGE_TOL = 1e-12


class Unstable(ArithmeticError):
    """Raised when a quantity is requested at an unstable step size."""

    def __init__(self, message, h=None, mode=None):
        super().__init__(message)
        self.h = h
        self.mode = mode


@dataclass(frozen=True)
class StepMatrix:
    """One-step propagation matrix ``[[a, b], [c, d]]`` of the oscillator."""

    a: float
    b: float
    c: float
    d: float

    def as_array(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    def power(self, n: int) -> np.ndarray:
        return np.linalg.matrix_power(self.as_array(), n)


@dataclass(frozen=True)
class RotationParams:
    """Rotation angle and axis ratio of a step matrix.

    ``theta`` and ``chi`` are ``nan`` when they are undefined (unstable
    matrices, and ``chi`` in the degenerate ``+-I`` case, where the caller has
    to take the limit in ``h``; see :func:`rho`).
    """

    theta: float
    chi: float
    stable: str
    degenerate: bool = False


def step_entries(scheme: SplittingScheme, h) -> tuple[np.ndarray, ...]:
    """Vectorised ``(A_h, B_h, C_h, D_h)`` for an array of step sizes."""
    h = np.asarray(h, dtype=float)
    a = np.ones_like(h)
    b = np.zeros_like(h)
    c = np.zeros_like(h)
    d = np.ones_like(h)
    for label, x in scheme.flows():
        t = x * h
        if label == DRIFT:
            a, b = a + t * c, b + t * d
        else:
            c, d = c - t * a, d - t * b
    return a, b, c, d


def harmonic_step_matrix(scheme: SplittingScheme, h: float) -> StepMatrix:
    """Step matrix of ``scheme`` with step ``h`` on the unit oscillator."""
    a, b, c, d = step_entries(scheme, float(h))
    return StepMatrix(float(a), float(b), float(c), float(d))


def reference_matrix(method: Literal["euler", "midpoint"], h: float) -> StepMatrix:
    """Step matrices of explicit Euler and the implicit midpoint rule."""
    if method == "euler":
        return StepMatrix(1.0, h, -h, 1.0)
    if method == "midpoint":
        den = 1.0 + h * h / 4.0
        a = (1.0 - h * h / 4.0) / den
        return StepMatrix(a, h / den, -h / den, a)
    raise ValueError(f"unknown reference method {method!r}")


def rotation_params(m: StepMatrix, tol: float = _EDGE_TOL) -> RotationParams:
    """Classify ``m`` and extract ``theta`` and ``chi`` when stable."""
    a, b, c = m.a, m.b, m.c
    if abs(a) > 1.0 + tol:
        return RotationParams(math.nan, math.nan, UNSTABLE)
    if abs(abs(a) - 1.0) <= tol:
        if abs(b) + abs(c) <= tol:
            theta = 0.0 if a > 0 else math.pi
            return RotationParams(theta, math.nan, STABLE, degenerate=True)
        # near the identity at small h, |a| is within tol of 1 but -bc is not small
        if -b * c <= tol * (abs(b) + abs(c)) ** 2:
            return RotationParams(math.nan, math.nan, WEAKLY_UNSTABLE)
    theta = math.atan2(math.sqrt(max(-b * c, 0.0)), a)
    chi = math.copysign(math.sqrt(-b / c), b)
    return RotationParams(theta, chi, STABLE)


def _rho_entries(b, c):
    return (b + c) ** 2 / (-2.0 * b * c)


def rho(scheme: SplittingScheme, h: float) -> float:
    """Bound ``rho(h)`` on the stationary mean energy error of ``scheme``.

    At the degenerate step sizes where the step matrix is ``+-I`` the value is
    the limit from below, evaluated a relative ``1e-7`` to the left.

    Raises:
        Unstable: if ``h`` is an unstable or weakly unstable step size.
    """
    m = harmonic_step_matrix(scheme, h)
    rp = rotation_params(m)
    if rp.stable != STABLE:
        raise Unstable(f"{scheme.name} is {rp.stable} at h={h!r}", h=h, mode=rp.stable)
    if rp.degenerate:
        m = harmonic_step_matrix(scheme, h * (1.0 - 1e-7))
    return float(_rho_entries(m.b, m.c))


def rho_two_stage_closed(b: float, h: float) -> float:
    """Closed-form ``rho(h; b)`` for the palindromic two-stage family."""
    d1 = 2.0 - b * h * h
    d2 = 2.0 - (0.5 - b) * h * h
    d3 = 1.0 - b * (0.5 - b) * h * h
    if d1 <= 0 or d2 <= 0 or d3 <= 0:
        raise Unstable(f"two_stage(b={b}) unstable at h={h}", h=h, mode=UNSTABLE)
    num = h**4 * (2.0 * b * b * (0.5 - b) * h * h + 4.0 * b * b - 6.0 * b + 1.0) ** 2
    return num / (8.0 * d1 * d2 * d3)


@dataclass(frozen=True)
class StabilityInterval:
    """Result of :func:`stability_interval`.

    ``boundary`` is ``+1`` or ``-1`` according to the line ``A_h = +-1``
    crossed at ``h_max``; ``None`` when ``censored``.
    """

    h_max: float
    boundary: int | None
    censored: bool


def _unstable_mask(a, b, c):
    edge = np.abs(np.abs(a) - 1.0) <= _EDGE_TOL
    off = np.abs(b) + np.abs(c)
    weak = edge & (off > _EDGE_TOL) & (-b * c <= _EDGE_TOL * off**2)
    return (np.abs(a) > 1.0 + _EDGE_TOL) | weak


def _golden_min(f, lo, hi, tol=1e-13, max_iter=200):
    """Golden-section search for a minimum of a unimodal ``f`` on ``[lo, hi]``."""
    g = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - g * (hi - lo)
    x2 = lo + g * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - g * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + g * (hi - lo)
            f2 = f(x2)
    return (x1, f1) if f1 <= f2 else (x2, f2)


def _first_unstable(scheme: SplittingScheme, limit: float, n_grid: int):
    """Smallest unstable ``h`` found in ``(0, limit]``, or ``None``.

    Besides the grid itself, every local minimum of ``1 - |A_h|`` on the grid is
    refined by golden section; near double roots of ``A_h = +-1`` the unstable
    window can be much narrower than the grid spacing.
    """
    hs = limit * np.arange(1, n_grid + 1) / n_grid
    a, b, c, _ = step_entries(scheme, hs)
    bad = _unstable_mask(a, b, c)
    first = int(np.argmax(bad)) if bad.any() else n_grid
    margin = 1.0 - np.abs(a)

    def margin_at(h):
        return 1.0 - abs(float(step_entries(scheme, h)[0]))

    for k in range(1, first - 1):
        if margin[k] < margin[k - 1] and margin[k] <= margin[k + 1] and margin[k] < 0.05:
            h_min, g_min = _golden_min(margin_at, hs[k - 1], hs[k + 1])
            if g_min < -_EDGE_TOL:
                return h_min
    return hs[first] if first < n_grid else None


def stability_interval(
    scheme: SplittingScheme,
    scan_limit: float = 20.0,
    tol: float = 1e-10,
    n_grid: int = 10_000,
) -> StabilityInterval:
    """Longest ``(0, h_max)`` on which ``|A_h| < 1``.

    A dense scan locates the first unstable step size, then bisection narrows
    the boundary to ``tol``.  If no instability is seen below ``scan_limit`` the
    result is censored at ``scan_limit``.
    """
    h_bad = _first_unstable(scheme, scan_limit, n_grid)
    if h_bad is None:
        return StabilityInterval(scan_limit, None, True)

    def is_bad(h):
        a, b, c, _ = step_entries(scheme, h)
        return bool(_unstable_mask(a, b, c))

    lo = 0.0
    hi = float(h_bad)
    # walk left until a stable point is found, grid points below h_bad are stable
    lo = max(hi - scan_limit / n_grid, 0.0)
    while is_bad(lo) and lo > 0:
        lo = max(lo - scan_limit / n_grid, 0.0)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if is_bad(mid):
            hi = mid
        else:
            lo = mid
    a_hi = float(step_entries(scheme, hi)[0])
    return StabilityInterval(0.5 * (lo + hi), 1 if a_hi > 0 else -1, False)


def sup_rho(scheme: SplittingScheme, c: float, grid: int = 1000, refine: bool = False) -> float:
    """``max rho(h)`` over the uniform grid ``c k / grid``, ``k = 1..grid``.

    Returns ``inf`` if the scheme is unstable at a grid point.  With
    ``refine`` the unstable windows between grid points that open up near
    double roots of ``A_h = +-1`` are searched for as well.  Minimax-optimal
    schemes sit exactly on such double roots, so coefficient searches should
    use the plain grid version.
    """
    if grid < 1000:
        raise ValueError("grid must have at least 1000 points")
    hs = c * np.arange(1, grid + 1) / grid
    a, b, cc, _ = step_entries(scheme, hs)
    if np.any(_unstable_mask(a, b, cc)):
        return math.inf
    if refine and _first_unstable(scheme, c, grid) is not None:
        return math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = _rho_entries(b, cc)
    bad = ~np.isfinite(vals) | (np.abs(b) + np.abs(cc) <= 1e-9)
    for k in np.flatnonzero(bad):
        vals[k] = rho(scheme, float(hs[k] * (1.0 - 1e-6)))
    return float(np.max(vals))


def multivariate_energy_bound(
    scheme: SplittingScheme, freqs: Iterable[float], h: float
) -> float:
    """``sum_j rho(omega_j h)``: stationary mean energy error bound for a Gaussian.

    Raises:
        Unstable: naming the first mode whose scaled step is unstable.
    """
    total = 0.0
    for j, w in enumerate(freqs):
        if w <= 0:
            raise ValueError(f"frequency {j} must be positive, got {w}")
        try:
            total += rho(scheme, w * h)
        except Unstable as err:
            raise Unstable(
                f"mode {j} (omega={w}) unstable: omega*h={w * h}", h=h, mode=j
            ) from err
    return total


# ---------------------------------------------------------------------------
# Preconditioned splitting of the one-degree-of-freedom bridge model
#   H = p**2 / (2 omega**2) + (omega**2 + 1) q**2 / 2
# ---------------------------------------------------------------------------


def cot_ratio(z: float) -> float:
    """``(1 - z cot z) / z**2``, continuous at 0 with value 1/3."""
    if abs(z) < 1e-2:
        z2 = z * z
        return 1.0 / 3.0 + z2 / 45.0 + 2.0 * z2 * z2 / 945.0 + z2**3 / 4725.0
    return (1.0 - z / math.tan(z)) / (z * z)


def phmc_stable(c: float, omega: float, h: float) -> bool:
    """1-dof stability condition of the ``c``-splitting."""
    if c == 0:
        return h < 2.0 * omega / math.sqrt(1.0 + omega * omega)
    w2 = omega * omega
    return c * h + 2.0 * math.atan(h * (1.0 + (1.0 - c * c) * w2) / (2.0 * c * w2)) < math.pi


def phmc_step_matrix(c: float, omega: float, h: float) -> StepMatrix:
    """Explicit step matrix of the ``c``-splitting on the 1-dof model."""
    w2 = omega * omega
    if c == 0:
        a = 1.0 - h * h * (1.0 + w2) / (2.0 * w2)
        cc = h * (1.0 + w2) * (h * h - (4.0 - h * h) * w2) / (4.0 * w2)
        return StepMatrix(a, h / w2, cc, a)
    wt2 = 1.0 + (1.0 - c * c) * w2
    s, co = math.sin(c * h), math.cos(c * h)
    a = co - h * wt2 / (2.0 * c * w2) * s
    b = s / (c * w2)
    cc = -h * wt2 * co - (4.0 * c * c * w2 * w2 - h * h * wt2 * wt2) / (4.0 * c * w2) * s
    return StepMatrix(a, b, cc, a)


def phmc_rho_from_matrix(c: float, omega: float, h: float) -> float:
    """``rho(c, omega, h)`` from the step matrix with ``chi^2 -> (w^2 + w^4) chi^2``."""
    m = phmc_step_matrix(c, omega, h)
    if rotation_params(m).stable != STABLE:
        raise Unstable(f"c={c}, omega={omega} unstable at h={h}", h=h)
    w2 = omega * omega
    chi2 = (w2 + w2 * w2) * (-m.b / m.c)
    return 0.5 * (chi2 + 1.0 / chi2 - 2.0)


def phmc_rho_closed(c: float, omega: float, h: float) -> float:
    """Closed-form energy-error function of the ``c``-splitting at frequency ``omega``."""
    if not phmc_stable(c, omega, h):
        raise Unstable(f"c={c}, omega={omega}: h={h} violates the stability condition", h=h)
    iw2 = 1.0 / (omega * omega)
    base = 1.0 - c * c + iw2
    r = 0.25 * base * base + c * c * base * cot_ratio(c * h)
    den = (1.0 + iw2) * (1.0 + iw2 - h * h * r)
    if den <= 0:
        raise Unstable(f"c={c}, omega={omega}: nonpositive denominator at h={h}", h=h)
    return 0.5 * h**4 * r * r / den


def two_stage_rho_matrix(b: float, h: float) -> float:
    """Matrix-route ``rho`` of ``two_stage(b)``; cross-check for the closed form."""
    return rho(two_stage(b), h)
