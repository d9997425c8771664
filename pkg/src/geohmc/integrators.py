"""Splitting integrators for separable Hamiltonians ``H = p^T M^{-1} p / 2 + U(q)``.

States carry a trailing dimension axis, so ``q`` of shape ``(..., d)`` runs a
batch of independent trajectories through the same leg.  Callbacks on a
:class:`SeparableSystem` must accept such batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, optimize

from .harmonic import _golden_min, sup_rho
from .schemes import DRIFT, KICK, SplittingScheme, three_stage, two_stage

DIVERGENCE_THRESHOLD = 1e10

ArrayFn = Callable[[np.ndarray], np.ndarray]


class NotPositiveDefinite(linalg.LinAlgError):
    pass


def _cholesky(mat: np.ndarray, what: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{what} must be a square matrix, got shape {mat.shape}")
    if not np.allclose(mat, mat.T, rtol=1e-12, atol=1e-14):
        raise NotPositiveDefinite(f"{what} is not symmetric")
    try:
        return linalg.cholesky(mat, lower=True)
    except linalg.LinAlgError as err:
        raise NotPositiveDefinite(f"{what} is not positive definite") from err


@dataclass(frozen=True)
class PhaseState:
    """Position and momentum arrays of matching shape ``(..., d)``."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if q.shape != p.shape or q.ndim == 0:
            raise ValueError(f"q and p must have equal shape (..., d), got {q.shape} and {p.shape}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    def flipped(self) -> "PhaseState":
        """Momentum flip ``S(q, p) = (q, -p)``."""
        return PhaseState(self.q, -self.p)


class SeparableSystem:
    """Separable Hamiltonian with a constant mass matrix.

    Args:
        potential: ``q -> U(q)``, reducing over the last axis.
        force: ``q -> -grad U(q)``, same shape as ``q``.
        dim: Number of degrees of freedom ``d``.
        mass: ``None`` for the identity, a positive scalar, a vector of
            diagonal entries, or a dense SPD matrix.
    """

    def __init__(self, potential: ArrayFn, force: ArrayFn, dim: int, mass=None):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = int(dim)
        self.potential = potential
        self.force = force
        self._diag = None
        self._chol = None
        self._inv = None
        if mass is None:
            self._diag = np.ones(self.dim)
        else:
            mass = np.asarray(mass, dtype=float)
            if mass.ndim == 0:
                mass = np.full(self.dim, float(mass))
            if mass.ndim == 1:
                if mass.shape != (self.dim,) or np.any(mass <= 0):
                    raise NotPositiveDefinite("diagonal mass must have d positive entries")
                self._diag = mass
            else:
                if mass.shape != (self.dim, self.dim):
                    raise ValueError(f"mass matrix must be {self.dim}x{self.dim}")
                self._chol = _cholesky(mass, "mass matrix")
                self._inv = linalg.cho_solve((self._chol, True), np.eye(self.dim))
                self.mass = mass
        if self._diag is not None:
            self.mass = np.diag(self._diag)
        self.identity_mass = self._diag is not None and np.all(self._diag == 1.0)

    @property
    def mass_factor(self) -> np.ndarray:
        """Lower Cholesky factor ``L`` with ``M = L L^T``."""
        if self._chol is not None:
            return self._chol
        return np.diag(np.sqrt(self._diag))

    def mass_apply(self, p: np.ndarray) -> np.ndarray:
        """``M^{-1} p`` on the last axis."""
        if self.identity_mass:
            return p
        if self._diag is not None:
            return p / self._diag
        return p @ self._inv

    def mass_sample(self, rng: np.random.Generator, shape: tuple = ()) -> np.ndarray:
        """Draw momenta ``xi ~ N(0, M)`` of shape ``shape + (d,)``."""
        z = rng.standard_normal(tuple(shape) + (self.dim,))
        if self._diag is not None:
            return z * np.sqrt(self._diag)
        return z @ self._chol.T

    def kinetic(self, p: np.ndarray) -> np.ndarray:
        return 0.5 * np.sum(p * self.mass_apply(p), axis=-1)

    def hamiltonian(self, state: PhaseState) -> np.ndarray:
        return self.potential(state.q) + self.kinetic(state.p)

    def force_check(self, rng: np.random.Generator, n_points: int = 5, scale: float = 1.0,
                    eps: float = 1e-5) -> float:
        """Largest relative error between ``force`` and central differences of ``-U``."""
        worst = 0.0
        for _ in range(n_points):
            q = scale * rng.standard_normal(self.dim)
            f = np.asarray(self.force(q), dtype=float)
            fd = np.empty(self.dim)
            for i in range(self.dim):
                e = np.zeros(self.dim)
                e[i] = eps * max(1.0, abs(q[i]))
                fd[i] = -(self.potential(q + e) - self.potential(q - e)) / (2 * e[i])
            worst = max(worst, np.linalg.norm(f - fd) / max(np.linalg.norm(fd), 1e-12))
        return float(worst)


@dataclass(frozen=True)
class LegResult:
    """Outcome of :func:`leg`.

    ``delta_H`` and ``diverged`` have the batch shape of the state;
    diverged entries report ``delta_H = inf`` and their initial state.
    """

    final: PhaseState
    delta_H: np.ndarray | float
    n_force_evals: int
    diverged: np.ndarray | bool
    force_final: np.ndarray | None = None


def drift(sys: SeparableSystem, t: float, state: PhaseState) -> PhaseState:
    return PhaseState(state.q + t * sys.mass_apply(state.p), state.p)


def kick(sys: SeparableSystem, t: float, state: PhaseState) -> PhaseState:
    return PhaseState(state.q, state.p + t * sys.force(state.q))


def leg_flows(scheme: SplittingScheme, n: int, merge: bool = True) -> list[tuple[str, float]]:
    """Acting-order flow list for ``n`` steps, with boundary flows fused if ``merge``."""
    seq: list[tuple[str, float]] = []
    for _ in range(n):
        for label, x in scheme.flows():
            if merge and seq and seq[-1][0] == label:
                seq[-1] = (label, seq[-1][1] + x)
            else:
                seq.append((label, x))
    return seq


def _blown(q, p):
    with np.errstate(invalid="ignore"):
        return ~(
            (np.max(np.abs(q), axis=-1) <= DIVERGENCE_THRESHOLD)
            & (np.max(np.abs(p), axis=-1) <= DIVERGENCE_THRESHOLD)
        )


def leg(
    sys: SeparableSystem,
    scheme: SplittingScheme,
    h: float,
    n: int,
    state: PhaseState,
    merge: bool = True,
    force0: np.ndarray | None = None,
) -> LegResult:
    """Run ``n`` steps of ``scheme`` with step ``h`` and record the energy error.

    With ``merge`` the last kick of a step and the first kick of the next are
    fused, so a palindromic ``s``-stage scheme costs ``s n + 1`` force
    evaluations, or ``s n`` when the force at the initial position is passed
    as ``force0``.  ``force_final`` holds the force at the final position if
    the last flow was a kick.  Trajectories whose coordinates leave ``[-1e10, 1e10]`` or
    become non-finite are flagged as diverged and get ``delta_H = inf``.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    if int(n) != n or n < 1:
        raise ValueError(f"number of steps must be an integer >= 1, got {n}")
    q0, p0 = state.q, state.p
    q, p = q0, p0
    batch = q0.shape[:-1]
    div = np.zeros(batch, dtype=bool)
    evals = 0
    f = force0
    with np.errstate(over="ignore", invalid="ignore"):
        for label, x in leg_flows(scheme, int(n), merge):
            if label == DRIFT:
                q = q + (x * h) * sys.mass_apply(p)
                f = None
            else:
                if f is None:
                    f = sys.force(q)
                    evals += 1
                p = p + (x * h) * f
            bad = _blown(q, p)
            if np.any(bad & ~div):
                div = div | bad
                if div.all():
                    break
                q = np.where(div[..., None], q0, q)
                p = np.where(div[..., None], p0, p)
        if div.all():
            q, p, f = q0, p0, None
            dH = np.full(batch, np.inf)
        else:
            dH = (sys.potential(q) - sys.potential(q0)) + (sys.kinetic(p) - sys.kinetic(p0))
            dH = np.where(div | ~np.isfinite(dH), np.inf, dH)
            div = div | np.isinf(dH)
    if f is not None and div.any():
        f = None
    if batch == ():
        return LegResult(PhaseState(q, p), float(dH), evals, bool(div), f)
    return LegResult(PhaseState(q, p), dH, evals, div, f)


# ---------------------------------------------------------------------------
# Coefficient selection
# ---------------------------------------------------------------------------

AIA_B_RANGE = (0.19, 0.25)


def aia_select_b(c: float, n_coarse: int = 61, grid: int = 1000) -> float:
    """Two-stage parameter ``b`` minimising ``sup_rho(two_stage(b), c)``.

    A coarse grid over ``[0.19, 0.25]`` (endpoints included) seeds a
    golden-section refinement between the neighbours of the best grid point.
    For ``c >= 2 sqrt(2)`` every ``b < 1/4`` has an unstable window inside
    ``(0, c]``, so the result is exactly ``1/4``.

    Raises:
        ValueError: if ``c`` is outside ``(0, 4)``; reduce the step size.
    """
    if not 0 < c < 4:
        raise ValueError(f"AIA needs 0 < c < 4, got c={c}; reduce the step size")
    lo, hi = AIA_B_RANGE

    def objective(b):
        return sup_rho(two_stage(b), c, grid, refine=True)

    bs = np.linspace(lo, hi, n_coarse)
    vals = np.array([objective(b) for b in bs])
    k = int(np.argmin(vals))
    if not np.isfinite(vals[k]):
        raise ArithmeticError(f"no stable two-stage scheme on (0, {c}]")
    best_b, best_v = float(bs[k]), float(vals[k])
    left, right = bs[max(k - 1, 0)], bs[min(k + 1, n_coarse - 1)]
    b_ref, v_ref = _golden_min(objective, left, right, tol=1e-9)
    if v_ref < best_v:
        best_b, best_v = float(b_ref), float(v_ref)
    return best_b


@dataclass(frozen=True)
class ThreeStageFit:
    a: float
    b: float
    sup_rho: float


def optimize_three_stage(c: float = 3.0, grid: int = 1000) -> ThreeStageFit:
    """Minimise ``sup_rho(three_stage(a, b), c)`` over ``(a, b)``.

    Coarse grid over ``a in [0.2, 0.4]``, ``b in [0.05, 0.2]`` followed by
    Nelder-Mead on the log of the objective.
    """
    if c <= 0:
        raise ValueError("c must be positive")

    def objective(x):
        v = sup_rho(three_stage(x[0], x[1]), c, grid)
        return math.log(v) if 0 < v < math.inf else 1e3

    best = None
    for a in np.linspace(0.2, 0.4, 41):
        for b in np.linspace(0.05, 0.2, 31):
            v = objective((a, b))
            if best is None or v < best[0]:
                best = (v, a, b)
    res = optimize.minimize(
        objective, x0=[best[1], best[2]], method="Nelder-Mead",
        options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000},
    )
    a, b = (float(x) for x in res.x)
    return ThreeStageFit(a, b, sup_rho(three_stage(a, b), c, grid))


@dataclass(frozen=True)
class OrderEstimate:
    nu: float
    r_squared: float
    reliable: bool


def estimate_order(
    sys: SeparableSystem,
    scheme: SplittingScheme,
    state: PhaseState,
    h_list: Sequence[float],
) -> OrderEstimate:
    """Numerical order from the local error of one step.

    The reference is 100 steps of the same scheme at ``h/100``.  The slope of
    ``log ||psi_h(x) - ref_h(x)||`` against ``log h`` estimates ``nu + 1``;
    fits with ``R^2 < 0.99`` are marked unreliable.
    """
    h_list = np.asarray(sorted(h_list), dtype=float)
    if len(h_list) < 4:
        raise ValueError("need at least 4 step sizes")
    errs = []
    for h in h_list:
        one = leg(sys, scheme, h, 1, state).final
        ref = leg(sys, scheme, h / 100.0, 100, state).final
        errs.append(math.hypot(np.linalg.norm(one.q - ref.q), np.linalg.norm(one.p - ref.p)))
    x, y = np.log(h_list), np.log(errs)
    fit = np.polyfit(x, y, 1)
    resid = y - np.polyval(fit, x)
    r2 = 1.0 - resid @ resid / np.sum((y - y.mean()) ** 2)
    return OrderEstimate(float(fit[0] - 1.0), float(r2), bool(r2 >= 0.99))
