"""Preconditioned HMC for discretised path distributions.

The target on the interior nodes ``u_1..u_d`` of a uniform grid with spacing
``ds = S / (d + 1)`` has potential ``ds * (u^T (-L) u / 2 + sum_j g(u_j))``
with ``L`` the Dirichlet second-difference matrix.  With mass matrix ``-L`` and
velocity variable ``v = (-L)^{-1} p`` the Hamiltonian reads

    H_d = ds * (v^T (-L) v / 2 + u^T (-L) u / 2 + G(u)).

The integrator is Strang splitting of

    (A)  du/dt = v,  dv/dt = -c^2 u
    (B)  du/dt = 0,  dv/dt = -(1 - c^2) u - (-L)^{-1} G'(u)

as ``B(h/2) A(h) B(h/2)``.  At ``c = 1`` flow A is the exact rotation of the
free Gaussian part, which makes the method robust under grid refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg

from .harmonic import Unstable, phmc_rho_closed, phmc_stable
from .integrators import DIVERGENCE_THRESHOLD
from .sampler import TransitionRecord, geometric_steps

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LaplacianOp:
    """Dirichlet second-difference operator with cached factorisations.

    Attributes:
        ds: Grid spacing.
        d: Number of interior nodes.
        chol: Upper banded Cholesky factor of ``-L`` (``scipy`` banded layout).
        omega2: Eigenvalues of ``-L`` in ascending order, from the closed form.
    """

    ds: float
    d: int
    chol: np.ndarray
    omega2: np.ndarray

    @classmethod
    def build(cls, ds: float, d: int) -> "LaplacianOp":
        j = np.arange(1, d + 1)
        omega2 = 4.0 / ds**2 * np.sin(j * np.pi / (2 * (d + 1))) ** 2
        return cls(ds, d, linalg.cholesky_banded(_banded_neg_laplacian(ds, d)), omega2)

    @property
    def omegas(self) -> np.ndarray:
        return np.sqrt(self.omega2)

    def dense(self) -> np.ndarray:
        """Dense ``L`` (negative definite)."""
        off = np.full(self.d - 1, 1.0 / self.ds**2)
        return np.diag(np.full(self.d, -2.0 / self.ds**2)) + np.diag(off, 1) + np.diag(off, -1)

    def apply_neg(self, x: np.ndarray) -> np.ndarray:
        """``(-L) x`` on the last axis."""
        y = 2.0 * x
        y[..., 1:] -= x[..., :-1]
        y[..., :-1] -= x[..., 1:]
        return y / self.ds**2

    def solve_neg(self, b: np.ndarray) -> np.ndarray:
        """``(-L)^{-1} b`` on the last axis."""
        flat = b.reshape(-1, self.d).T
        return linalg.cho_solve_banded((self.chol, False), flat).T.reshape(b.shape)

    def solve_chol(self, z: np.ndarray) -> np.ndarray:
        """``R^{-1} z`` with ``-L = R^T R``; maps white noise to covariance ``(-L)^{-1}``."""
        flat = z.reshape(-1, self.d).T
        return linalg.solve_banded((0, 1), self.chol, flat).T.reshape(z.shape)


def _banded_neg_laplacian(ds: float, d: int, shift: float = 0.0) -> np.ndarray:
    ab = np.empty((2, d))
    ab[0, :] = -1.0 / ds**2
    ab[0, 0] = 0.0
    ab[1, :] = 2.0 / ds**2 + shift
    return ab


@dataclass(frozen=True)
class BridgeModel:
    """Discretised path target.

    Attributes:
        S: Interval length.
        d: Number of interior grid points.
        g: Elementwise nonlinearity ``g(u)``; summed to ``G(u)``.
        g_prime: Elementwise derivative of ``g``.
        c: Splitting parameter in ``[0, 1]``.
        boundary: Boundary values ``(x_minus, x_plus)`` of the original path;
            the stored ``g`` already absorbs them (see :func:`boundary_lift`).
        lift: Values of the linear lift at the interior nodes.
        name: Label for reports; ``"ou"`` enables the Gaussian oracles.
    """

    S: float
    d: int
    g: ArrayFn
    g_prime: ArrayFn
    c: float = 1.0
    boundary: tuple[float, float] = (0.0, 0.0)
    lift: np.ndarray | None = None
    name: str = "custom"
    lap: LaplacianOp | None = None

    def __post_init__(self):
        if self.d < 1 or self.S <= 0:
            raise ValueError("need d >= 1 and S > 0")
        if not 0 <= self.c <= 1:
            raise ValueError("c must lie in [0, 1]")
        if self.lap is None:
            object.__setattr__(self, "lap", LaplacianOp.build(self.ds, self.d))
        if self.lift is None:
            object.__setattr__(self, "lift", np.zeros(self.d))

    @property
    def ds(self) -> float:
        return self.S / (self.d + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.ds * np.arange(1, self.d + 1)

    def with_c(self, c: float) -> "BridgeModel":
        return BridgeModel(self.S, self.d, self.g, self.g_prime, c, self.boundary, self.lift,
                           self.name, self.lap)


@dataclass(frozen=True)
class BridgeState:
    u: np.ndarray
    v: np.ndarray


def _ou_g(u):
    return 0.5 * u * u


def _ou_gp(u):
    return u


def build_model(S: float, d: int, g: ArrayFn, g_prime: ArrayFn, c: float = 1.0,
                name: str = "custom") -> BridgeModel:
    """Build a model and its Laplacian caches.

    Raises:
        ArithmeticError: if the lowest eigenvalue check ``omega_1 >= 2/S`` fails.
    """
    m = BridgeModel(S, d, g, g_prime, c, name=name)
    if m.lap.omegas[0] < 2.0 / S * (1 - 1e-12):
        raise ArithmeticError("lowest Laplacian frequency below 2/S")
    return m


def ou_model(S: float = 1.0, d: int = 49, c: float = 1.0) -> BridgeModel:
    """Ornstein-Uhlenbeck bridge, ``g(u) = u^2 / 2``."""
    return build_model(S, d, _ou_g, _ou_gp, c, name="ou")


def d_for_spacing(S: float, ds: float) -> int:
    return int(round(S / ds)) - 1


def sample_v(model: BridgeModel, rng: np.random.Generator, shape: tuple = ()) -> np.ndarray:
    """Draw ``v ~ N(0, ds^{-1} (-L)^{-1})``."""
    z = rng.standard_normal(tuple(shape) + (model.d,))
    return model.lap.solve_chol(z) / math.sqrt(model.ds)


def a_flow(model: BridgeModel, t: float, state: BridgeState) -> BridgeState:
    u, v = state.u, state.v
    c = model.c
    if c == 0:
        return BridgeState(u + t * v, v)
    co, s = math.cos(c * t), math.sin(c * t)
    return BridgeState(u * co + v * (s / c), -c * s * u + co * v)


def b_kick(model: BridgeModel, t: float, state: BridgeState) -> BridgeState:
    """``v <- v + t * (-(1 - c^2) u - (-L)^{-1} G'(u))``."""
    u = state.u
    acc = -model.lap.solve_neg(model.g_prime(u))
    if model.c != 1:
        acc = acc - (1.0 - model.c**2) * u
    return BridgeState(u, state.v + t * acc)


def bridge_hamiltonian(model: BridgeModel, state: BridgeState) -> np.ndarray:
    u, v = state.u, state.v
    lap = model.lap
    quad = np.sum(v * lap.apply_neg(v), axis=-1) + np.sum(u * lap.apply_neg(u), axis=-1)
    return model.ds * (0.5 * quad + np.sum(model.g(u), axis=-1))


def strang_leg(model: BridgeModel, h: float, n: int, state: BridgeState):
    """``n`` merged Strang steps; returns ``(final, delta_H, diverged)``."""
    h0 = bridge_hamiltonian(model, state)
    cur = b_kick(model, 0.5 * h, state)
    div = np.zeros(state.u.shape[:-1], dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n):
            cur = a_flow(model, h, cur)
            cur = b_kick(model, h if i < n - 1 else 0.5 * h, cur)
            bad = ~((np.max(np.abs(cur.u), axis=-1) <= DIVERGENCE_THRESHOLD)
                    & (np.max(np.abs(cur.v), axis=-1) <= DIVERGENCE_THRESHOLD))
            if np.any(bad):
                div = div | bad
                if div.all():
                    break
                cur = BridgeState(np.where(div[..., None], state.u, cur.u),
                                  np.where(div[..., None], state.v, cur.v))
        dH = bridge_hamiltonian(model, cur) - h0
    dH = np.where(div | ~np.isfinite(dH), np.inf, dH)
    return cur, dH, div | np.isinf(dH)


def phmc_transition(model: BridgeModel, h: float, state: BridgeState, rng: np.random.Generator,
                    n: int | None = None, lam: float | None = None) -> TransitionRecord:
    """One preconditioned HMC transition.

    Pass ``n`` for a fixed number of steps or ``lam`` for the randomised
    variant with a geometric step count of mean ``lam / h``.  A rejected
    transition returns ``(u0, -v0)``.
    """
    if (n is None) == (lam is None):
        raise ValueError("give exactly one of n and lam")
    steps = geometric_steps(lam, h, rng) if lam is not None else int(n)
    batch = state.u.shape[:-1]
    v0 = sample_v(model, rng, batch)
    start = BridgeState(state.u, v0)
    end, dH, _ = strang_leg(model, h, steps, start)
    with np.errstate(over="ignore"):
        alpha = np.where(np.isfinite(dH), np.exp(-np.maximum(dH, 0.0)), 0.0)
    acc = rng.random(batch) < alpha
    u = np.where(acc[..., None], end.u, state.u)
    v = np.where(acc[..., None], end.v, -v0)
    out = BridgeState(u, v)
    if batch == ():
        return TransitionRecord(bool(acc), float(dH), out, steps + 1, float(alpha))
    return TransitionRecord(acc, dH, out, steps + 1, alpha)


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    reason: str = ""


def stability_check(model: BridgeModel, h: float) -> StabilityReport:
    """Splitting stability at the lowest frequency ``omega_1``."""
    w1 = float(model.lap.omegas[0])
    if phmc_stable(model.c, w1, h):
        return StabilityReport(True)
    if model.c == 0:
        bound = 2 * w1 / math.sqrt(1 + w1 * w1)
        return StabilityReport(False, f"c=0 requires h < {bound:.6g} at omega_1={w1:.6g}")
    return StabilityReport(False, f"c={model.c}: c h + 2 arctan(...) >= pi at omega_1={w1:.6g}")


def mean_energy_bound(model: BridgeModel, h: float) -> float:
    """``sum_j rho(c, omega_j, h)``, the stationary mean energy error bound for the OU case.

    Raises:
        Unstable: naming the first unstable mode.
    """
    total = 0.0
    for j, w in enumerate(model.lap.omegas):
        try:
            total += phmc_rho_closed(model.c, float(w), h)
        except Unstable as err:
            raise Unstable(f"mode {j} (omega={w:.6g}) unstable at h={h}", h=h, mode=j) from err
    return total


def ou_precision(model: BridgeModel) -> np.ndarray:
    """Precision matrix ``ds (-L + I)`` of the OU bridge."""
    return model.ds * (-model.lap.dense() + np.eye(model.d))


def ou_exact_covariance(model: BridgeModel) -> np.ndarray:
    return np.linalg.solve(ou_precision(model), np.eye(model.d))


def ou_exact_sample(model: BridgeModel, rng: np.random.Generator, shape: tuple = ()) -> np.ndarray:
    """Exact stationary draws of ``u`` for the homogeneous OU bridge."""
    ab = _banded_neg_laplacian(model.ds, model.d, shift=1.0)
    chol = linalg.cholesky_banded(ab)
    z = rng.standard_normal(tuple(shape) + (model.d,))
    flat = z.reshape(-1, model.d).T
    u = linalg.solve_banded((0, 1), chol, flat).T.reshape(z.shape)
    return u / math.sqrt(model.ds)


def boundary_lift(model: BridgeModel, x_minus: float, x_plus: float) -> BridgeModel:
    """Shift to homogeneous boundary conditions with the linear lift ``l(s)``.

    The path is ``x = u + l`` on the interior nodes.  A linear ``l`` has zero
    second difference, and the boundary terms of the discrete Dirichlet energy
    telescope away, so only ``g`` changes: ``g~(u) = g(u + l)``.
    """
    s = model.nodes
    lift = x_minus + (x_plus - x_minus) * s / model.S
    g, gp = model.g, model.g_prime
    total = model.lift + lift

    def g_lift(u):
        return g(u + lift)

    def gp_lift(u):
        return gp(u + lift)

    name = model.name if (x_minus, x_plus) == (0.0, 0.0) else f"{model.name}+lift"
    return BridgeModel(model.S, model.d, g_lift, gp_lift, model.c,
                       (model.boundary[0] + x_minus, model.boundary[1] + x_plus),
                       total, name, model.lap)


@dataclass
class PathRunResult:
    acceptance: float
    mean_accept_prob: float
    mean: np.ndarray
    variance: np.ndarray
    n_samples: int


def run_phmc(model: BridgeModel, h: float, lam: float, n_transitions: int, rng,
             n_chains: int = 1, init: np.ndarray | None = None, burn_in: int = 0,
             randomize: bool = True) -> PathRunResult:
    """Run ``n_chains`` lockstep chains and collect per-node moments of ``u``.

    Moments are accumulated with per-transition batch sums (Chan merge), so
    memory stays ``O(n_chains * d)``.
    """
    u = np.zeros((n_chains, model.d)) if init is None else np.array(init, dtype=float)
    state = BridgeState(u, np.zeros_like(u))
    n = 0
    mean = np.zeros(model.d)
    m2 = np.zeros(model.d)
    n_acc = 0
    sum_alpha = 0.0
    fixed_n = None if randomize else max(1, int(math.floor(lam / h * (1 + 1e-9))))
    for i in range(burn_in + n_transitions):
        rec = phmc_transition(model, h, state, rng, n=fixed_n, lam=None if fixed_n else lam)
        state = rec.state
        if i < burn_in:
            continue
        x = state.u
        nb = x.shape[0]
        bm = x.mean(axis=0)
        bm2 = ((x - bm) ** 2).sum(axis=0)
        tot = n + nb
        delta = bm - mean
        mean = mean + delta * nb / tot
        m2 = m2 + bm2 + delta**2 * n * nb / tot
        n = tot
        n_acc += int(np.sum(rec.accepted))
        sum_alpha += float(np.sum(rec.accept_prob))
    return PathRunResult(n_acc / n, sum_alpha / n, mean, m2 / (n - 1), n)


def relative_l2(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


@dataclass(frozen=True)
class EnergyErrorEstimate:
    direct: float
    direct_se: float
    symmetric: float
    symmetric_se: float

    @property
    def best(self) -> tuple[float, float]:
        """Estimate with the smaller standard error."""
        if self.symmetric_se < self.direct_se:
            return self.symmetric, self.symmetric_se
        return self.direct, self.direct_se


def energy_error_stats(dH: np.ndarray) -> EnergyErrorEstimate:
    """Two unbiased estimates of ``E(Delta)`` at stationarity.

    Reversibility and volume preservation give ``E[Delta] = E[Delta (1 - exp(-Delta))] / 2``;
    the second form has far lower variance when ``Delta`` is small.
    """
    dH = np.asarray(dH, dtype=float)
    n = dH.size
    sym = 0.5 * dH * (-np.expm1(-dH))
    return EnergyErrorEstimate(float(dH.mean()), float(dH.std(ddof=1) / math.sqrt(n)),
                               float(sym.mean()), float(sym.std(ddof=1) / math.sqrt(n)))


def ou_energy_errors(model: BridgeModel, h: float, lam: float, n_samples: int,
                     rng: np.random.Generator) -> np.ndarray:
    """One-leg energy errors from exact stationary OU states.

    Each sample gets its own geometric step count of mean ``lam / h``;
    samples with equal counts are integrated together.
    """
    u = ou_exact_sample(model, rng, (n_samples,))
    v = sample_v(model, rng, (n_samples,))
    steps = rng.geometric(min(1.0, h / lam), size=n_samples)
    out = np.empty(n_samples)
    for m in np.unique(steps):
        idx = np.flatnonzero(steps == m)
        _, dH, _ = strang_leg(model, h, int(m), BridgeState(u[idx], v[idx]))
        out[idx] = dH
    return out
