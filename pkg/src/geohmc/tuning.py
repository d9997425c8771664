"""Step-size scaling in high dimension and empirical step-size tuning.

For ``m`` independent copies of a target and a method of order ``nu``, the
step ``h = ell * m**(-1 / (2 nu))`` keeps the acceptance rate away from 0 and
1; it converges to ``A(ell) = 2 Phi(-ell**nu * sqrt(Sigma) / 2)`` where
``Sigma = lim sigma^2(h) / h^(2 nu)`` is the energy-error variance constant of
one copy.  (``Sigma`` is unrelated to the target covariance.)
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .integrators import PhaseState, SeparableSystem, leg
from .sampler import ChainConfig, make_rng, run_chain, steps_for
from .schemes import SplittingScheme
from .targets import ProductTarget

DEFAULT_TARGET_ACCEPTANCE = 0.651


class ConsistencyWarning(UserWarning):
    """Energy-error moments are inconsistent with the assumed asymptotics."""


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def norm_sf(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def _norm_logpdf(x):
    return -0.5 * x * x - 0.5 * math.log(2 * math.pi)


def norm_ppf(p: float) -> float:
    """Inverse standard normal CDF by Newton iteration on ``log Phi(x) = log p``."""
    if not 0 < p < 1:
        if p == 0:
            return -math.inf
        if p == 1:
            return math.inf
        raise ValueError("p must lie in [0, 1]")
    if p > 0.5:
        return -norm_ppf(1.0 - p)
    if p == 0.5:
        return 0.0
    lp = math.log(p)
    x = -math.sqrt(-2.0 * lp)  # tail asymptote, always to the left of the root
    for _ in range(100):
        cdf = norm_cdf(x)
        step = (math.log(cdf) - lp) * cdf / math.exp(_norm_logpdf(x))
        x -= step
        if abs(step) <= 1e-15 * max(1.0, abs(x)):
            break
    return x


def norm_isf(p: float) -> float:
    """Inverse survival function; accurate in the upper tail."""
    return -norm_ppf(p)


def acceptance_limit(ell: float, nu: int, Sigma: float) -> float:
    """Limiting acceptance ``2 Phi(-ell**nu sqrt(Sigma) / 2)``."""
    if ell <= 0 or Sigma < 0:
        raise ValueError("need ell > 0 and Sigma >= 0")
    return 2.0 * norm_cdf(-(ell**nu) * math.sqrt(Sigma) / 2.0)


def _efficiency(A: float, nu: int) -> float:
    return A * norm_isf(A / 2.0) ** (1.0 / nu)


def optimal_acceptance(nu: int) -> float:
    """Acceptance maximising ``A * (Phi^{-1}(1 - A/2))^(1/nu)``; free of ``Sigma``."""
    if nu < 1:
        raise ValueError("nu must be >= 1")
    g = (math.sqrt(5.0) - 1.0) / 2.0
    lo, hi = 1e-9, 1.0 - 1e-9
    x1, x2 = hi - g * (hi - lo), lo + g * (hi - lo)
    f1, f2 = _efficiency(x1, nu), _efficiency(x2, nu)
    while hi - lo > 1e-12:
        if f1 >= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - g * (hi - lo)
            f1 = _efficiency(x1, nu)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + g * (hi - lo)
            f2 = _efficiency(x2, nu)
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ScalingLaw:
    ell: float
    nu: int
    m: int

    def __post_init__(self):
        if self.nu not in (1, 2, 4):
            raise ValueError("nu must be 1, 2 or 4")
        if self.ell <= 0 or self.m < 1:
            raise ValueError("need ell > 0 and m >= 1")

    @property
    def h(self) -> float:
        return self.ell * self.m ** (-1.0 / (2 * self.nu))


@dataclass(frozen=True)
class EnergyErrorMoments:
    """Monte Carlo moments of the one-leg energy error at stationarity.

    ``ratio`` is ``2 mu_hat / sigma2_hat``, which tends to 1 as ``h -> 0``.
    ``nu_hat`` is the order implied by comparing ``sigma2`` at ``h`` and
    ``h/2`` (``nan`` if that check was skipped).
    """

    h: float
    nu: int
    n_samples: int
    mu_hat: float
    mu_se: float
    sigma2_hat: float
    sigma2_se: float
    Sigma_hat: float
    Sigma_se: float
    ratio: float
    ratio_se: float
    nu_hat: float = math.nan
    nu_se: float = math.nan


def _moments(dH: np.ndarray):
    """Moments of the energy error and their sampling (co)variances.

    The mean uses ``E[Delta] = E[Delta (1 - exp(-Delta))] / 2``, valid at
    stationarity for reversible volume-preserving legs and much less noisy
    than the plain average when ``Delta`` is small.
    """
    n = dH.size
    sym = 0.5 * dH * (-np.expm1(-dH))
    mu = float(sym.mean())
    c = dH - dH.mean()
    s2 = float(c @ c / (n - 1))
    m4 = float(np.mean(c**4))
    var_mu = float(sym.var(ddof=1)) / n
    var_s2 = max(m4 - s2 * s2, 0.0) / n
    cov = float(np.mean((sym - mu) * (c * c - s2))) / n
    return n, mu, s2, var_mu, var_s2, cov


def stationary_energy_errors(sys: SeparableSystem, scheme: SplittingScheme, lam: float, h: float,
                             n_samples: int, rng: np.random.Generator,
                             batch: int = 20_000) -> np.ndarray:
    """Energy errors of independent legs started from exact draws of ``sys``."""
    if not hasattr(sys, "sample"):
        raise TypeError("system needs a sample(rng, shape) method for stationary starts")
    n = steps_for(lam, h)
    if n < 1:
        raise ValueError("lam / h must be >= 1")
    per = max(1, batch // sys.dim)
    out = []
    left = n_samples
    while left > 0:
        k = min(per, left)
        q = sys.sample(rng, (k,))
        p = sys.mass_sample(rng, (k,))
        out.append(leg(sys, scheme, h, n, PhaseState(q, p)).delta_H)
        left -= k
    return np.concatenate(out)


def estimate_sigma(sys: SeparableSystem, scheme: SplittingScheme, lam: float, nu: int,
                   h_small: float, n_samples: int, rng: np.random.Generator,
                   check_order: bool = True) -> EnergyErrorMoments:
    """Estimate ``Sigma`` from ``sigma^2(h) / h^(2 nu)`` at ``h = h_small``.

    Two checks raise :class:`ConsistencyWarning` when they fail by more than
    5 standard errors:

    * ``2 mu / sigma^2`` should be close to 1;
    * with ``check_order``, a second run at ``h_small / 2`` gives an implied
      order ``log2(sigma^2(h) / sigma^2(h/2)) / 2`` that should match ``nu``
      (deviations below 0.25 are tolerated as finite-``h`` bias).
    """
    dH = stationary_energy_errors(sys, scheme, lam, h_small, n_samples, rng)
    if not np.all(np.isfinite(dH)):
        raise ArithmeticError(f"diverged legs at h={h_small}; reduce h_small")
    n, mu, s2, var_mu, var_s2, cov = _moments(dH)
    scale = h_small ** (2 * nu)
    ratio = 2.0 * mu / s2
    var_ratio = ratio**2 * (var_mu / mu**2 + var_s2 / s2**2 - 2 * cov / (mu * s2)) if mu else math.inf
    ratio_se = math.sqrt(max(var_ratio, 0.0))
    nu_hat = nu_se = math.nan
    if check_order:
        dH2 = stationary_energy_errors(sys, scheme, lam, h_small / 2.0, n_samples, rng)
        _, _, s2b, _, var_s2b, _ = _moments(dH2)
        nu_hat = math.log2(s2 / s2b) / 2.0
        nu_se = math.sqrt(var_s2 / s2**2 + var_s2b / s2b**2) / (2.0 * math.log(2.0))
        if abs(nu_hat - nu) > max(5.0 * nu_se, 0.25):
            warnings.warn(
                f"sigma^2 scales like h^{2 * nu_hat:.2f}, not h^{2 * nu}: is nu={nu} right?",
                ConsistencyWarning, stacklevel=2)
    if abs(ratio - 1.0) > 5.0 * ratio_se:
        warnings.warn(
            f"2 mu / sigma^2 = {ratio:.4f} +- {ratio_se:.4f} is far from 1; h_small={h_small} too large?",
            ConsistencyWarning, stacklevel=2)
    return EnergyErrorMoments(
        h=h_small, nu=nu, n_samples=n, mu_hat=mu, mu_se=math.sqrt(var_mu),
        sigma2_hat=s2, sigma2_se=math.sqrt(var_s2), Sigma_hat=s2 / scale,
        Sigma_se=math.sqrt(var_s2) / scale, ratio=ratio, ratio_se=ratio_se,
        nu_hat=nu_hat, nu_se=nu_se,
    )


@dataclass(frozen=True)
class ScalingRow:
    m: int
    h: float
    n_steps: int
    acceptance: float
    acceptance_se: float
    predicted: float

    @property
    def deviation(self) -> float:
        return self.acceptance - self.predicted


def scaling_experiment(base_target, scheme: SplittingScheme, ell: float, nu: int, m_list,
                       lam: float, n_samples: int, rng: np.random.Generator,
                       Sigma_hat: float | None = None, h_small: float | None = None,
                       sigma_samples: int = 200_000) -> tuple[list[ScalingRow], EnergyErrorMoments | None]:
    """Stationary HMC acceptance on ``m``-fold products against ``A(ell)``.

    The observed acceptance is the mean Metropolis probability over
    ``n_samples`` independent legs from exact stationary draws.  If
    ``Sigma_hat`` is not given it is estimated on the base target with
    :func:`estimate_sigma` at ``h_small`` (default ``ell / 16``).
    """
    moments = None
    if Sigma_hat is None:
        h_small = ell / 16.0 if h_small is None else h_small
        moments = estimate_sigma(base_target, scheme, lam, nu, h_small, sigma_samples, rng,
                                 check_order=False)
        Sigma_hat = moments.Sigma_hat
    pred = acceptance_limit(ell, nu, Sigma_hat)
    rows = []
    for m in sorted(m_list):
        law = ScalingLaw(ell, nu, int(m))
        prod = ProductTarget(base_target, int(m))
        dH = stationary_energy_errors(prod, scheme, lam, law.h, n_samples, rng)
        with np.errstate(over="ignore"):
            alpha = np.where(np.isfinite(dH), np.exp(-np.maximum(dH, 0.0)), 0.0)
        rows.append(ScalingRow(int(m), law.h, steps_for(lam, law.h), float(alpha.mean()),
                               float(alpha.std(ddof=1) / math.sqrt(alpha.size)), pred))
    return rows, moments


@dataclass
class TuneResult:
    h: float
    acceptance: float
    ci: tuple[float, float]
    converged: bool
    diagnostic: str = ""
    history: list = field(default_factory=list)


def tune_h(sys: SeparableSystem, scheme: SplittingScheme, lam: float,
           target_acceptance: float = DEFAULT_TARGET_ACCEPTANCE,
           rng: np.random.Generator | None = None, h0: float | None = None,
           pilot: int = 2000, init=None, max_widen: int = 30, max_iter: int = 60,
           bracket_tol: float = 1e-3) -> TuneResult:
    """Stochastic bisection for the step size giving ``target_acceptance``.

    Each candidate ``h`` gets an independent pilot chain of ``pilot``
    transitions; its acceptance rate and a 95% normal-approximation interval
    decide the next move.  The search assumes acceptance decreases with ``h``
    and widens the bracket when a pilot contradicts that.  It stops when the
    interval covers the target or the bracket is narrower than
    ``bracket_tol``; if no bracket is found the closest ``h`` seen is returned
    with a diagnostic.
    """
    if not 0 < target_acceptance < 1:
        raise ValueError("target_acceptance must lie in (0, 1)")
    rng = make_rng(None) if rng is None else rng
    init = np.zeros(sys.dim) if init is None else np.asarray(init, dtype=float)
    history = []

    def pilot_at(h):
        cfg = ChainConfig(lam=lam, h=h)
        child = make_rng(int(rng.integers(2**63)))
        res = run_chain(sys, scheme, cfg, init, pilot, rng=child)
        a = res.stats.acceptance_rate
        half = 1.96 * math.sqrt(max(a * (1 - a), 1.0 / pilot) / pilot)
        history.append((h, a))
        return a, (a - half, a + half)

    def best_seen(msg):
        h, a = min(history, key=lambda t: abs(t[1] - target_acceptance))
        half = 1.96 * math.sqrt(max(a * (1 - a), 1.0 / pilot) / pilot)
        return TuneResult(h, a, (a - half, a + half), False, msg, history)

    h = min(lam, lam / 10.0) if h0 is None else min(h0, lam)
    a, ci = pilot_at(h)
    if ci[0] <= target_acceptance <= ci[1]:
        return TuneResult(h, a, ci, True, "", history)
    lo = hi = None
    if a > target_acceptance:
        lo = h
        for _ in range(max_widen):
            h = min(2.0 * h, lam)
            a, ci = pilot_at(h)
            if ci[0] <= target_acceptance <= ci[1]:
                return TuneResult(h, a, ci, True, "", history)
            if a < target_acceptance:
                hi = h
                break
            lo = h
            if h >= lam:
                return best_seen(f"acceptance stays above {target_acceptance} up to h = lam = {lam}")
        else:
            return best_seen("failed to bracket from below")
    else:
        hi = h
        for _ in range(max_widen):
            h = 0.5 * h
            a, ci = pilot_at(h)
            if ci[0] <= target_acceptance <= ci[1]:
                return TuneResult(h, a, ci, True, "", history)
            if a > target_acceptance:
                lo = h
                break
            hi = h
        else:
            return best_seen("acceptance stays below target for all tried h")
    for _ in range(max_iter):
        if hi - lo < bracket_tol:
            break
        mid = math.sqrt(lo * hi)
        a, ci = pilot_at(mid)
        if ci[0] <= target_acceptance <= ci[1]:
            return TuneResult(mid, a, ci, True, "", history)
        if a > target_acceptance:
            lo = mid
        else:
            hi = mid
    res = best_seen("")
    if hi - lo < bracket_tol:
        return TuneResult(res.h, res.acceptance, res.ci, True, "bracket below tolerance", history)
    return TuneResult(res.h, res.acceptance, res.ci, False, "iteration cap reached", history)
