"""Target distributions: Gaussians with exact flows, product targets, 1-d demos."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .integrators import NotPositiveDefinite, PhaseState, SeparableSystem, _cholesky


class GaussianTarget(SeparableSystem):
    """Quadratic Hamiltonian ``p^T M^{-1} p / 2 + q^T K q / 2``.

    The normal-mode change of variables ``Q = Omega U^T L^T q``,
    ``P = U^T L^{-1} p`` with ``M = L L^T`` and ``U Omega^2 U^T = L^{-1} K L^{-T}``
    turns the dynamics into independent unit rotations at the frequencies
    ``omega_i``.

    Args:
        K: Symmetric positive definite stiffness (precision) matrix.
        M: Mass matrix; identity if omitted.
    """

    def __init__(self, K, M=None):
        K = np.atleast_2d(np.asarray(K, dtype=float))
        d = K.shape[0]
        self.K = K
        self._k_chol = _cholesky(K, "stiffness matrix K")
        M = np.eye(d) if M is None else np.atleast_2d(np.asarray(M, dtype=float))
        super().__init__(self._potential, self._force, d, mass=M)
        L = self.mass_factor
        Linv = linalg.solve_triangular(L, np.eye(d), lower=True)
        # tridiagonal reduction + implicit QL ("ev" driver) keeps mode order deterministic
        w2, U = linalg.eigh(Linv @ K @ Linv.T, driver="ev")
        if np.any(w2 <= 0):
            raise NotPositiveDefinite("K is not positive definite")
        self.frequencies = np.sqrt(w2)
        self._fwd_q = (self.frequencies[:, None] * U.T) @ L.T  # q -> Q
        self._fwd_p = U.T @ Linv  # p -> P
        self._inv_q = Linv.T @ U / self.frequencies[None, :]  # Q -> q
        self._inv_p = L @ U  # P -> p

    def _potential(self, q):
        return 0.5 * np.sum(q * (q @ self.K), axis=-1)

    def _force(self, q):
        return -(q @ self.K)

    @property
    def covariance(self) -> np.ndarray:
        return linalg.cho_solve((self._k_chol, True), np.eye(self.dim))

    def sample(self, rng: np.random.Generator, shape: tuple = ()) -> np.ndarray:
        """Exact draws from ``N(0, K^{-1})`` of shape ``shape + (d,)``."""
        z = rng.standard_normal(tuple(shape) + (self.dim,))
        # q = L_K^{-T} z has covariance K^{-1}
        flat = z.reshape(-1, self.dim).T
        q = linalg.solve_triangular(self._k_chol.T, flat, lower=False)
        return q.T.reshape(z.shape)

    def exact_flow(self, time, state: PhaseState) -> PhaseState:
        """Exact Hamiltonian flow for ``time`` (scalar or batch-broadcastable)."""
        Q = state.q @ self._fwd_q.T
        P = state.p @ self._fwd_p.T
        wt = np.asarray(time, dtype=float)[..., None] * self.frequencies
        c, s = np.cos(wt), np.sin(wt)
        Qt = Q * c + P * s
        Pt = P * c - Q * s
        return PhaseState(Qt @ self._inv_q.T, Pt @ self._inv_p.T)


def gaussian_frequencies(t: GaussianTarget) -> np.ndarray:
    """Normal-mode frequencies in ascending order."""
    return np.array(t.frequencies)


def exact_gaussian_flow(t: GaussianTarget, time, state: PhaseState) -> PhaseState:
    return t.exact_flow(time, state)


def gaussian_moments(t: GaussianTarget) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the position marginal."""
    return np.zeros(t.dim), t.covariance


def standard_normal(d: int = 1) -> GaussianTarget:
    return GaussianTarget(np.eye(d))


def bivariate_example() -> GaussianTarget:
    """``K = [[101, -99], [-99, 101]] / 2`` with frequencies 1 and 10."""
    return GaussianTarget(0.5 * np.array([[101.0, -99.0], [-99.0, 101.0]]))


class ProductTarget(SeparableSystem):
    """``m`` independent copies of a base system stacked as ``(..., m * d)``."""

    def __init__(self, base: SeparableSystem, m: int):
        if m < 1:
            raise ValueError("m must be >= 1")
        self.base = base
        self.m = int(m)
        d = base.dim
        mass = None if base.identity_mass else linalg.block_diag(*([base.mass] * self.m))
        super().__init__(self._potential, self._force, d * self.m, mass=mass)

    def _blocks(self, q):
        return q.reshape(q.shape[:-1] + (self.m, self.base.dim))

    def _potential(self, q):
        return np.sum(self.base.potential(self._blocks(q)), axis=-1)

    def _force(self, q):
        return self.base.force(self._blocks(q)).reshape(q.shape)

    def sample(self, rng: np.random.Generator, shape: tuple = ()) -> np.ndarray:
        """Exact draws, available when the base target has a ``sample`` method."""
        x = self.base.sample(rng, tuple(shape) + (self.m,))
        return x.reshape(tuple(shape) + (self.dim,))


@dataclass(frozen=True)
class DemoTarget:
    """One-dimensional non-Gaussian demonstration potentials."""

    kind: str
    system: SeparableSystem = field(repr=False)


def _double_well_u(q):
    return np.sum(0.25 * (q * q - 1.0) ** 2, axis=-1)


def _double_well_f(q):
    return -q * (q * q - 1.0)


def _quartic_u(q):
    return np.sum(0.25 * q**4, axis=-1)


def _quartic_f(q):
    return -(q**3)


def double_well(dim: int = 1) -> DemoTarget:
    """``U(q) = (q^2 - 1)^2 / 4`` per coordinate; modes at ``q = +-1``."""
    return DemoTarget("double_well", SeparableSystem(_double_well_u, _double_well_f, dim))


def quartic(dim: int = 1) -> DemoTarget:
    """``U(q) = q^4 / 4`` per coordinate."""
    return DemoTarget("quartic", SeparableSystem(_quartic_u, _quartic_f, dim))


def demo_target(kind: str, dim: int = 1) -> DemoTarget:
    if kind == "double_well":
        return double_well(dim)
    if kind == "quartic":
        return quartic(dim)
    raise ValueError(f"unknown demo target {kind!r}")
