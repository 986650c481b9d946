"""Negative Binomial demand with an AR(1)-driven success probability.

Parameterization: ``D ~ NB(r, p)`` counts failures before the ``r``-th
success, so ``E[D] = r(1-p)/p`` and ``Var[D] = r(1-p)/p**2``.  Non-integer
``r`` is handled through log-gamma throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .errors import DomainError


def _check_rp(r: float, p) -> None:
    if not np.all(np.asarray(r) > 0):
        raise DomainError(f"dispersion r must be positive, got {r}")
    p_arr = np.asarray(p)
    if not np.all((p_arr > 0) & (p_arr < 1)):
        raise DomainError(f"success probability must lie in (0, 1), got {p}")


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


@dataclass(frozen=True)
class DemandParams:
    r: float
    p0: float
    rho: float = 0.6
    sigma_eps: float = 0.02
    p_floor: float = 0.001
    p_ceil: float = 0.999
    # Mean-reverting offset (1 - rho) * p0; off gives the literal p_t = rho p_{t-1} + eps_t.
    mean_reverting: bool = True

    def __post_init__(self):
        if not self.r > 0:
            raise DomainError(f"r must be positive, got {self.r}")
        if not 0 < self.p0 < 1:
            raise DomainError(f"p0 must lie in (0, 1), got {self.p0}")
        if not 0 <= self.rho < 1:
            raise DomainError(f"rho must lie in [0, 1), got {self.rho}")
        if not self.sigma_eps >= 0:
            raise DomainError(f"sigma_eps must be non-negative, got {self.sigma_eps}")
        if not 0 < self.p_floor < self.p_ceil < 1:
            raise DomainError("clamp bounds must satisfy 0 < p_floor < p_ceil < 1")
        if not self.p_floor <= self.p0 <= self.p_ceil:
            raise DomainError("p0 must lie within [p_floor, p_ceil]")


@dataclass(frozen=True)
class DemandPath:
    probabilities: np.ndarray
    draws: np.ndarray

    def __len__(self) -> int:
        return len(self.draws)


def nb_logpmf(r: float, p, x):
    _check_rp(r, p)
    x = np.asarray(x)
    if np.any(x < 0):
        raise DomainError("x must be non-negative")
    out = (special.gammaln(x + r) - special.gammaln(r) - special.gammaln(x + 1.0)
           + r * np.log(p) + special.xlog1py(x, -np.asarray(p)))
    return _scalar(out)


def nb_pmf(r: float, p, x):
    """``C(x+r-1, x) p**r (1-p)**x`` with the binomial coefficient via log-gamma."""
    return _scalar(np.exp(nb_logpmf(r, p, x)))


def nb_cdf(r: float, p, x):
    """``P(D <= x)``, computed as the regularized incomplete beta ``I_p(r, x+1)``."""
    _check_rp(r, p)
    x = np.floor(np.asarray(x, dtype=float))
    out = np.where(x < 0, 0.0, special.betainc(r, np.maximum(x, 0.0) + 1.0, p))
    return _scalar(out)


def nb_moments(r: float, p: float) -> tuple[float, float]:
    _check_rp(r, p)
    mean = r * (1.0 - p) / p
    return mean, mean / p


def overdispersion_index(r: float, p: float) -> float:
    """Variance-to-mean ratio, ``1/p`` for the NB law (independent of ``r`` at fixed ``p``)."""
    _check_rp(r, p)
    return 1.0 / p


def p_for_mean(r: float, mean: float) -> float:
    """Success probability giving the requested mean at dispersion ``r``."""
    return r / (r + mean)


def step_p(p_prev, params: DemandParams, noise):
    """One AR(1) update of the success probability, clamped to the bounds.

    ``noise`` is a standard-normal variate; it is scaled by ``sigma_eps`` here.
    """
    level = (1.0 - params.rho) * params.p0 if params.mean_reverting else 0.0
    raw = level + params.rho * np.asarray(p_prev, dtype=float) + params.sigma_eps * np.asarray(noise)
    return _scalar(np.clip(raw, params.p_floor, params.p_ceil))


def sample_demand(r: float, p, rng: np.random.Generator, size=None):
    """Gamma-Poisson mixture draw: ``Lambda ~ Gamma(r, (1-p)/p)``, ``D ~ Poisson(Lambda)``."""
    _check_rp(r, p)
    p = np.asarray(p, dtype=float)
    lam = rng.gamma(r, (1.0 - p) / p, size=size)
    draws = rng.poisson(lam)
    return int(draws) if np.ndim(draws) == 0 else draws


def sample_path(params: DemandParams, horizon: int, rng: np.random.Generator) -> DemandPath:
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    probs = np.empty(horizon)
    draws = np.empty(horizon, dtype=np.int64)
    p = params.p0
    for t in range(horizon):
        if t > 0:
            p = step_p(p, params, rng.standard_normal())
        probs[t] = p
        draws[t] = sample_demand(params.r, p, rng)
    return DemandPath(probs, draws)


# Inversion-based variants used by the simulation engine.  Each replication
# consumes three uniforms per period: AR noise, gamma mixing, Poisson count.
UNIFORMS_PER_PERIOD = 3


def nb_from_uniforms(r: float, p, u_gamma: np.ndarray, u_poisson: np.ndarray) -> np.ndarray:
    """Gamma-Poisson mixture by inversion of both stages; monotone in both uniforms."""
    p = np.asarray(p, dtype=float)
    lam = special.gammaincinv(r, u_gamma) * ((1.0 - p) / p)
    return stats.poisson.ppf(u_poisson, lam).astype(np.int64)


def paths_from_uniforms(params: DemandParams, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized demand paths from a ``(M, 3 * horizon)`` uniform block.

    Returns ``(probabilities, draws)`` each of shape ``(M, horizon)``.  The first
    period uses ``p0``; the noise column of period one is left unused.
    """
    m, width = u.shape
    if width % UNIFORMS_PER_PERIOD:
        raise ValueError("uniform block width must be a multiple of 3")
    horizon = width // UNIFORMS_PER_PERIOD
    probs = np.empty((m, horizon))
    draws = np.empty((m, horizon), dtype=np.int64)
    p = np.full(m, params.p0)
    for t in range(horizon):
        cols = u[:, UNIFORMS_PER_PERIOD * t: UNIFORMS_PER_PERIOD * (t + 1)]
        if t > 0:
            p = step_p(p, params, special.ndtri(cols[:, 0]))
        probs[:, t] = p
        draws[:, t] = nb_from_uniforms(params.r, p, cols[:, 1], cols[:, 2])
    return probs, draws
