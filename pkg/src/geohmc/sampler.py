"""HMC transition kernels and chain driver.

Every transition accepts either a single state (``q`` of shape ``(d,)``) or a
batch of independent chains (``(n_chains, d)``).  In a batch all chains share
the random duration of a transition (step count or step size) but draw their
own momenta and acceptance uniforms, so each chain is still a valid Markov
chain with the right invariant law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .integrators import LegResult, PhaseState, SeparableSystem, leg
from .schemes import SplittingScheme
from .targets import GaussianTarget

DurationMode = Literal["fixed_steps", "uniform_h", "geometric_steps"]

_FLOOR_EPS = 1e-9


def steps_for(lam: float, h: float) -> int:
    """``floor(lam / h)``, robust to representation error such as ``1.35 / 0.15``."""
    return int(math.floor(lam / h * (1.0 + _FLOOR_EPS)))


@dataclass(frozen=True)
class ChainConfig:
    """Parameters of an HMC-family chain.

    Attributes:
        lam: Leg duration ``lambda``.
        h: Step size.
        duration_mode: ``fixed_steps`` uses ``n = floor(lam / h)`` steps;
            ``uniform_h`` draws the step size uniformly from
            ``[(1 - delta) h, (1 + delta) h]`` once per leg and keeps ``n``;
            ``geometric_steps`` draws ``n`` from a geometric law on
            ``{1, 2, ...}`` with mean ``lam / h``.
        delta: Relative half-width for ``uniform_h``.
        ghmc_phi: Horowitz angle; ``pi/2`` is a full momentum refresh.
        xhmc_K: Number of extra chances; 0 is plain HMC.
        seed: Root seed for :func:`make_rng`.
    """

    lam: float
    h: float
    duration_mode: DurationMode = "fixed_steps"
    delta: float = 0.1
    ghmc_phi: float = math.pi / 2
    xhmc_K: int = 0
    seed: int = 0

    def __post_init__(self):
        if not (self.lam > 0 and self.h > 0):
            raise ValueError("lam and h must be positive")
        if self.duration_mode not in ("fixed_steps", "uniform_h", "geometric_steps"):
            raise ValueError(f"unknown duration_mode {self.duration_mode!r}")
        if self.duration_mode != "geometric_steps" and self.n_steps < 1:
            raise ValueError(f"floor(lam/h) must be >= 1, got lam={self.lam}, h={self.h}")
        if not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")
        if not 0 < self.ghmc_phi <= math.pi / 2:
            raise ValueError("ghmc_phi must lie in (0, pi/2]")
        if int(self.xhmc_K) != self.xhmc_K or self.xhmc_K < 0:
            raise ValueError("xhmc_K must be a nonnegative integer")

    @property
    def n_steps(self) -> int:
        return steps_for(self.lam, self.h)

    @property
    def full_refresh(self) -> bool:
        return self.ghmc_phi == math.pi / 2


def mala_config(h: float, **kw) -> ChainConfig:
    """MALA as HMC with a single step per accept/reject."""
    return ChainConfig(lam=h, h=h, duration_mode="fixed_steps", **kw)


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; the project's fixed RNG."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed, n: int) -> list[np.random.Generator]:
    """``n`` independent generators derived from one root seed by ``SeedSequence.spawn``."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True)
class TransitionRecord:
    """One Markov transition.

    ``accept_prob`` is the Metropolis probability ``min(1, exp(-delta_H))``
    (for XHMC, the final envelope value ``Gamma^K``).
    """

    accepted: np.ndarray | bool
    delta_H: np.ndarray | float
    state: PhaseState
    n_force_evals: int
    accept_prob: np.ndarray | float = 0.0
    force: np.ndarray | None = field(default=None, repr=False)


def refresh_momentum(sys: SeparableSystem, rng: np.random.Generator, shape: tuple = ()) -> np.ndarray:
    return sys.mass_sample(rng, shape)


def ghmc_refresh(sys: SeparableSystem, p: np.ndarray, phi: float, rng: np.random.Generator) -> np.ndarray:
    """Partial refresh ``cos(phi) p + sin(phi) xi`` with ``xi ~ N(0, M)``."""
    if not 0 < phi <= math.pi / 2:
        raise ValueError("phi must lie in (0, pi/2]; phi = 0 never refreshes")
    xi = sys.mass_sample(rng, p.shape[:-1])
    if phi == math.pi / 2:
        return xi
    return math.cos(phi) * p + math.sin(phi) * xi


def _momentum(sys, cfg: ChainConfig, state: PhaseState, rng) -> np.ndarray:
    if cfg.full_refresh:
        return refresh_momentum(sys, rng, state.q.shape[:-1])
    return ghmc_refresh(sys, state.p, cfg.ghmc_phi, rng)


def _accept_prob(dH):
    with np.errstate(over="ignore", invalid="ignore"):
        a = np.exp(-np.maximum(dH, 0.0))
    return np.where(np.isfinite(dH), a, 0.0)


def _select(mask, a, b):
    """``a`` where ``mask`` else ``b``, broadcasting over the trailing axis."""
    if np.ndim(mask) == 0:
        return a if mask else b
    return np.where(np.asarray(mask)[..., None], a, b)


def _metropolis(sys, scheme, h, n, q0, xi, rng, force0=None) -> TransitionRecord:
    start = PhaseState(q0, xi)
    res: LegResult = leg(sys, scheme, h, n, start, force0=force0)
    alpha = _accept_prob(res.delta_H)
    u = rng.random(np.shape(res.delta_H))
    acc = u < alpha
    q = _select(acc, res.final.q, q0)
    p = _select(acc, res.final.p, -xi)
    force = None
    if force0 is not None and res.force_final is not None:
        force = _select(acc, res.force_final, force0)
    if np.ndim(acc) == 0:
        acc, alpha = bool(acc), float(alpha)
    return TransitionRecord(acc, res.delta_H, PhaseState(q, p), res.n_force_evals, alpha, force)


def hmc_transition(sys, scheme: SplittingScheme, cfg: ChainConfig, state: PhaseState,
                   rng: np.random.Generator, force0=None) -> TransitionRecord:
    """Numerical HMC with ``n = floor(lam/h)`` steps and momentum flip on rejection.

    A GHMC partial refresh is used when ``cfg.ghmc_phi < pi/2``.
    """
    if not scheme.palindromic:
        raise ValueError(f"{scheme.name} is not palindromic; the simplified acceptance rule needs reversibility")
    xi = _momentum(sys, cfg, state, rng)
    return _metropolis(sys, scheme, cfg.h, cfg.n_steps, state.q, xi, rng, force0)


def geometric_steps(lam: float, h: float, rng: np.random.Generator) -> int:
    """Geometric draw on ``{1, 2, ...}`` with mean ``lam / h``."""
    p = min(1.0, h / lam)
    return int(rng.geometric(p))


def rhmc_transition(sys, scheme, cfg: ChainConfig, state, rng, force0=None) -> TransitionRecord:
    """Randomised-duration HMC with a geometric number of steps."""
    m = geometric_steps(cfg.lam, cfg.h, rng)
    xi = _momentum(sys, cfg, state, rng)
    return _metropolis(sys, scheme, cfg.h, m, state.q, xi, rng, force0)


def uniform_h_transition(sys, scheme, cfg: ChainConfig, state, rng, force0=None) -> TransitionRecord:
    """HMC with step size drawn from ``U[(1 - delta) h, (1 + delta) h]`` per leg."""
    dt = cfg.h * (1.0 + cfg.delta * (2.0 * rng.random() - 1.0)) if cfg.delta > 0 else cfg.h
    xi = _momentum(sys, cfg, state, rng)
    return _metropolis(sys, scheme, dt, cfg.n_steps, state.q, xi, rng, force0)


def _leg_length(cfg: ChainConfig, rng) -> tuple[float, int]:
    if cfg.duration_mode == "geometric_steps":
        return cfg.h, geometric_steps(cfg.lam, cfg.h, rng)
    if cfg.duration_mode == "uniform_h" and cfg.delta > 0:
        return cfg.h * (1.0 + cfg.delta * (2.0 * rng.random() - 1.0)), cfg.n_steps
    return cfg.h, cfg.n_steps


def xhmc_transition(sys, scheme, cfg: ChainConfig, state, rng, force0=None) -> TransitionRecord:
    """Extra-chance HMC.

    A single uniform ``U`` is compared against the envelope
    ``Gamma^j = max(alpha^1, ..., alpha^j)``; the first ``j <= K + 1`` with
    ``U < Gamma^j`` selects ``Psi^j(q0, xi0)``, and if none does the output is
    ``(q0, -xi0)``.  Extensions stop once every chain has decided; a diverged
    extension contributes nothing from then on.
    """
    K = int(cfg.xhmc_K)
    h, n = _leg_length(cfg, rng)
    xi = _momentum(sys, cfg, state, rng)
    q0 = state.q
    batch = q0.shape[:-1]
    u = rng.random(batch)
    h0 = sys.hamiltonian(PhaseState(q0, xi))
    cur = PhaseState(q0, xi)
    gamma = np.zeros(batch)
    decided = np.zeros(batch, dtype=bool)
    dead = np.zeros(batch, dtype=bool)
    out_q, out_p = q0, -xi
    out_dH = np.full(batch, np.nan)
    first_dH = None
    evals = 0
    for _ in range(K + 1):
        res = leg(sys, scheme, h, n, cur)
        evals += res.n_force_evals
        dead = dead | np.asarray(res.diverged)
        with np.errstate(invalid="ignore"):
            dH = np.where(dead, np.inf, sys.hamiltonian(res.final) - h0)
        if first_dH is None:
            first_dH = dH
        gamma = np.maximum(gamma, _accept_prob(dH))
        take = ~decided & (u < gamma)
        out_q = _select(take, res.final.q, out_q)
        out_p = _select(take, res.final.p, out_p)
        out_dH = np.where(take, dH, out_dH)
        decided = decided | take
        if np.all(decided | dead):
            break
        cur = res.final
    out_dH = np.where(decided, out_dH, first_dH)
    if batch == ():
        return TransitionRecord(bool(decided), float(out_dH), PhaseState(out_q, out_p), evals,
                                float(gamma))
    return TransitionRecord(decided, out_dH, PhaseState(out_q, out_p), evals, gamma)


def exact_hmc_transition(target: GaussianTarget, lam: float, state: PhaseState,
                         rng: np.random.Generator, randomize: bool = False) -> TransitionRecord:
    """Exact HMC on a Gaussian target; ``randomize`` draws the duration from ``Exp(mean=lam)``."""
    if not isinstance(target, GaussianTarget):
        raise TypeError("exact HMC requires a GaussianTarget")
    xi = refresh_momentum(target, rng, state.q.shape[:-1])
    t = rng.exponential(lam) if randomize else lam
    start = PhaseState(state.q, xi)
    end = target.exact_flow(t, start)
    dH = target.hamiltonian(end) - target.hamiltonian(start)
    batch = state.q.shape[:-1]
    acc = True if batch == () else np.ones(batch, dtype=bool)
    return TransitionRecord(acc, dH, end, 0, 1.0 if batch == () else np.ones(batch))


def transition(sys, scheme, cfg: ChainConfig, state, rng, force0=None) -> TransitionRecord:
    """Dispatch on ``cfg``: XHMC if ``xhmc_K > 0``, else by duration mode."""
    if cfg.xhmc_K > 0:
        return xhmc_transition(sys, scheme, cfg, state, rng)
    if cfg.duration_mode == "geometric_steps":
        return rhmc_transition(sys, scheme, cfg, state, rng, force0)
    if cfg.duration_mode == "uniform_h":
        return uniform_h_transition(sys, scheme, cfg, state, rng, force0)
    return hmc_transition(sys, scheme, cfg, state, rng, force0)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


class RunStats:
    """Running chain statistics, mergeable across independent chains.

    Means and variances use Welford updates and are merged with the
    Chan et al. pairwise formula, so merging is associative up to rounding.
    """

    def __init__(self, dim: int, max_lag: int = 1):
        self.dim = dim
        self.max_lag = max_lag
        self.n = 0
        self.n_accepted = 0
        self.sum_alpha = 0.0
        self.sum_dH = 0.0
        self.n_finite_dH = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)
        self.n_force_evals = 0
        self._obs: list[float] = []

    def push(self, q: np.ndarray, rec: TransitionRecord | None = None, observable: float | None = None):
        self.n += 1
        delta = q - self.mean
        self.mean = self.mean + delta / self.n
        self.m2 = self.m2 + delta * (q - self.mean)
        if rec is not None:
            self.n_accepted += int(rec.accepted)
            self.sum_alpha += float(rec.accept_prob)
            self.n_force_evals += rec.n_force_evals
            if np.isfinite(rec.delta_H):
                self.sum_dH += float(rec.delta_H)
                self.n_finite_dH += 1
        self._obs.append(float(q[0]) if observable is None else float(observable))

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n if self.n else math.nan

    @property
    def mean_accept_prob(self) -> float:
        return self.sum_alpha / self.n if self.n else math.nan

    @property
    def mean_delta_H(self) -> float:
        return self.sum_dH / self.n_finite_dH if self.n_finite_dH else math.nan

    @property
    def variance(self) -> np.ndarray:
        return self.m2 / (self.n - 1) if self.n > 1 else np.full(self.dim, math.nan)

    def autocorrelation(self, lag: int | None = None) -> float:
        """Lag-``k`` autocorrelation of the stored scalar observable."""
        lag = self.max_lag if lag is None else lag
        x = np.asarray(self._obs)
        if len(x) <= lag + 1:
            return math.nan
        x = x - x.mean()
        den = float(x @ x)
        return float(x[:-lag] @ x[lag:] / den) if den > 0 else math.nan

    def merge(self, other: "RunStats") -> "RunStats":
        out = RunStats(self.dim, self.max_lag)
        n = self.n + other.n
        out.n = n
        out.n_accepted = self.n_accepted + other.n_accepted
        out.sum_alpha = math.fsum([self.sum_alpha, other.sum_alpha])
        out.sum_dH = math.fsum([self.sum_dH, other.sum_dH])
        out.n_finite_dH = self.n_finite_dH + other.n_finite_dH
        out.n_force_evals = self.n_force_evals + other.n_force_evals
        if n:
            delta = other.mean - self.mean
            out.mean = self.mean + delta * (other.n / n)
            out.m2 = self.m2 + other.m2 + delta * delta * (self.n * other.n / n)
        out._obs = self._obs + other._obs
        return out

    def summary(self) -> dict:
        return {
            "n_transitions": self.n,
            "acceptance_rate": self.acceptance_rate,
            "mean_accept_prob": self.mean_accept_prob,
            "mean_delta_H": self.mean_delta_H,
            "n_force_evals": self.n_force_evals,
            "mean": self.mean.tolist(),
            "variance": self.variance.tolist(),
            f"autocorr_lag{self.max_lag}": self.autocorrelation(),
        }


@dataclass
class ChainResult:
    samples: np.ndarray
    stats: RunStats
    records: list = field(default_factory=list, repr=False)


def run_chain(
    sys: SeparableSystem,
    scheme: SplittingScheme | None,
    cfg: ChainConfig,
    init: np.ndarray | PhaseState,
    N: int,
    rng: np.random.Generator | None = None,
    exact: bool = False,
    force_budget: int | None = None,
    cache_force: bool = False,
    observable: Callable[[np.ndarray], float] | None = None,
    keep_records: bool = False,
) -> ChainResult:
    """Iterate the configured transition ``N`` times on a single chain.

    Args:
        sys: Target system; must be a :class:`GaussianTarget` when ``exact``.
        scheme: Splitting scheme (ignored when ``exact``).
        cfg: Chain configuration.
        init: Initial position, or a full state (its momentum matters for GHMC).
        N: Maximum number of transitions.
        rng: Generator; defaults to ``make_rng(cfg.seed)``.
        exact: Use exact Gaussian flows (with Exp-distributed durations for
            ``geometric_steps``).
        force_budget: Stop before a transition would push the cumulative
            number of force evaluations above this value.
        cache_force: Reuse the force at the current position across
            transitions (``s n`` instead of ``s n + 1`` evaluations per leg).
        observable: Scalar function of ``q`` for the autocorrelation;
            defaults to the first coordinate.
        keep_records: Retain every :class:`TransitionRecord`.

    Returns:
        Samples of shape ``(n_done, d)`` and the :class:`RunStats`.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = make_rng(cfg.seed) if rng is None else rng
    if isinstance(init, PhaseState):
        state = init
    else:
        q = np.asarray(init, dtype=float)
        state = PhaseState(q, sys.mass_sample(rng, q.shape[:-1]))
    stats = RunStats(sys.dim)
    samples = []
    records = []
    used = 0
    force = None
    if cache_force and not exact:
        force = sys.force(state.q)
        used = 1
    for _ in range(N):
        if exact:
            rec = exact_hmc_transition(sys, cfg.lam, state, rng,
                                       randomize=cfg.duration_mode == "geometric_steps")
        else:
            if force_budget is not None:
                cost = _leg_cost(scheme, cfg) - (1 if force is not None else 0)
                if used + cost > force_budget:
                    break
            rec = transition(sys, scheme, cfg, state, rng, force0=force)
            if cache_force:
                force = rec.force
                if force is None:
                    force = sys.force(rec.state.q)
                    used += 1
        used += rec.n_force_evals
        state = rec.state
        samples.append(state.q)
        stats.push(state.q, rec, None if observable is None else observable(state.q))
        if keep_records:
            records.append(rec)
    stats.n_force_evals = used
    return ChainResult(np.array(samples).reshape(-1, sys.dim), stats, records)


def _leg_cost(scheme: SplittingScheme, cfg: ChainConfig) -> int:
    """Worst-case force evaluations of one fixed-length leg (plain HMC)."""
    n = cfg.n_steps
    return scheme.stages * n + (1 if scheme.coeffs[0][0] == scheme.coeffs[-1][0] == "B" else 0)


def run_chains(sys, scheme, cfg: ChainConfig, init: np.ndarray, n_transitions: int,
               rng: np.random.Generator, exact: bool = False, burn_in: int = 0):
    """Lockstep batch of chains; returns positions of shape ``(n_transitions, n_chains, d)``.

    Also returns per-transition acceptance probabilities and energy errors of
    shape ``(n_transitions, n_chains)``.
    """
    q = np.asarray(init, dtype=float)
    state = PhaseState(q, sys.mass_sample(rng, q.shape[:-1]))
    total = burn_in + n_transitions
    qs = np.empty((n_transitions,) + q.shape)
    alphas = np.empty((n_transitions,) + q.shape[:-1])
    dHs = np.empty_like(alphas)
    for i in range(total):
        if exact:
            rec = exact_hmc_transition(sys, cfg.lam, state, rng,
                                       randomize=cfg.duration_mode == "geometric_steps")
        else:
            rec = transition(sys, scheme, cfg, state, rng)
        state = rec.state
        if i >= burn_in:
            k = i - burn_in
            qs[k] = state.q
            alphas[k] = rec.accept_prob
            dHs[k] = rec.delta_H
    return qs, alphas, dHs
