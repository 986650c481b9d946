"""Parameter recovery for the demand model and count regressions.

Covers method-of-moments and maximum-likelihood fits of ``NB(r, p)``, the
Poisson baseline, rolling reconstruction of success probabilities, the AR(1)
coefficient, and Poisson / NB2 regressions with a log link.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special

from .errors import (
    ConvergenceError,
    DegenerateError,
    DomainError,
    EquidispersionError,
    LengthError,
    SingularDesignError,
)


def as_counts(series) -> np.ndarray:
    """Counts of a ``MonthlyDemandSeries`` or any 1-D array-like."""
    counts = getattr(series, "counts", series)
    y = np.asarray(counts, dtype=float)
    if y.ndim != 1:
        raise DomainError("series must be one-dimensional")
    if np.any(y < 0):
        raise DomainError("counts must be non-negative")
    return y


# --------------------------------------------------------------------------
# Univariate NB / Poisson fits
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NbFit:
    r_hat: float
    p_hat: float
    log_likelihood: float
    converged: bool
    iterations: int

    @property
    def mean(self) -> float:
        return self.r_hat * (1 - self.p_hat) / self.p_hat


def mom_from_moments(mean: float, variance: float) -> tuple[float, float]:
    if not variance > mean:
        raise EquidispersionError(
            f"variance {variance:.6g} does not exceed mean {mean:.6g}; NB moments undefined")
    r = mean * mean / (variance - mean)
    return r, r / (r + mean)


def mom_estimate(series) -> tuple[float, float]:
    """Method-of-moments ``(r_hat, p_hat)`` from the sample mean and variance (ddof=1)."""
    y = as_counts(series)
    if y.size < 2:
        raise LengthError("method of moments needs at least two observations")
    return mom_from_moments(float(y.mean()), float(y.var(ddof=1)))


def nb_loglik(y: np.ndarray, r: float, p: float) -> float:
    n = y.size
    return float(np.sum(special.gammaln(y + r)) - n * special.gammaln(r)
                 - np.sum(special.gammaln(y + 1)) + n * r * math.log(p)
                 + math.log1p(-p) * y.sum())


def _nb_derivs(y: np.ndarray, theta: np.ndarray):
    """Log-likelihood, gradient and Hessian in ``(log r, logit p)``."""
    r = math.exp(theta[0])
    p = special.expit(theta[1])
    n = y.size
    s = y.sum()
    ll = nb_loglik(y, r, p)
    dr = np.sum(special.digamma(y + r)) - n * special.digamma(r) + n * math.log(p)
    drr = np.sum(special.polygamma(1, y + r)) - n * special.polygamma(1, r)
    # d/dlogit p of (n r log p + s log(1-p)) = n r (1-p) - s p
    g = np.array([r * dr, n * r * (1 - p) - s * p])
    h = np.empty((2, 2))
    h[0, 0] = r * dr + r * r * drr
    h[0, 1] = h[1, 0] = n * r * (1 - p)
    h[1, 1] = -(n * r + s) * p * (1 - p)
    return ll, g, h


def nb_mle(series, max_iter: int = 500, tol: float = 1e-8) -> NbFit:
    """Maximize the NB log-likelihood by damped Newton steps in ``(log r, logit p)``.

    ``tol`` bounds the gradient norm of the per-observation log-likelihood.
    A finite maximizer exists only when the (ddof=0) sample variance exceeds
    the mean; otherwise the supremum is the Poisson limit ``r -> inf`` and a
    :class:`ConvergenceError` is raised.
    """
    y = as_counts(series)
    if y.size == 0:
        raise DomainError("series is empty")
    mean = float(y.mean())
    if mean == 0:
        raise ConvergenceError("all counts are zero; likelihood maximized on the p -> 1 boundary")
    if not float(y.var()) > mean:
        raise ConvergenceError("no overdispersion; likelihood maximized in the Poisson limit")
    try:
        r0, p0 = mom_estimate(y)
    except (EquidispersionError, LengthError):
        r0 = 1.0
        p0 = r0 / (r0 + mean)
    theta = np.array([math.log(r0), special.logit(p0)])
    n = y.size
    ll, g, h = _nb_derivs(y, theta)
    for it in range(1, max_iter + 1):
        if np.linalg.norm(g) / n <= tol:
            return NbFit(math.exp(theta[0]), float(special.expit(theta[1])), ll, True, it - 1)
        try:
            step = -np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            step = g / n
        if step @ g <= 0:  # not an ascent direction: fall back to scaled gradient
            step = g / (n * max(1.0, np.abs(h).max() / n))
        t = 1.0
        while t > 1e-12:
            cand = theta + t * step
            ll_c, g_c, h_c = _nb_derivs(y, cand)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            raise ConvergenceError("line search failed")
        theta, ll, g, h = cand, ll_c, g_c, h_c
        if theta[0] > 40:
            raise ConvergenceError("dispersion diverged towards the Poisson limit")
    raise ConvergenceError(f"no convergence after {max_iter} iterations")


def poisson_mle(series) -> tuple[float, float]:
    """``(lambda_hat, log_likelihood)`` of an i.i.d. Poisson model."""
    y = as_counts(series)
    if y.size == 0:
        raise DomainError("series is empty")
    lam = float(y.mean())
    if lam == 0:
        return 0.0, 0.0
    ll = float(np.sum(y * math.log(lam) - lam - special.gammaln(y + 1)))
    return lam, ll


# --------------------------------------------------------------------------
# Success-probability dynamics
# --------------------------------------------------------------------------

class RhoEstimate(NamedTuple):
    rho: float  # clamped to [0, 0.999]
    raw: float


def reconstruct_p_series(series, window: int = 12, p_ceil: float = 0.999) -> np.ndarray:
    """Rolling-window method-of-moments success probabilities.

    One value per window of ``window`` consecutive observations.  Windows whose
    sample variance does not exceed the mean have no NB moment solution and
    yield the sentinel ``p_ceil``.
    """
    y = as_counts(series)
    if window < 2:
        raise ValueError("window must be at least 2")
    if y.size < window + 1:
        raise LengthError(f"series of length {y.size} is shorter than window + 1 = {window + 1}")
    views = np.lib.stride_tricks.sliding_window_view(y, window)
    means = views.mean(axis=1)
    variances = views.var(axis=1, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(variances > means, means / variances, p_ceil)
    return np.minimum(p, p_ceil)


def estimate_rho(p_series, method: str = "ols") -> RhoEstimate:
    """AR(1) coefficient of a probability sequence.

    ``"ols"`` is the least-squares slope of ``p_t`` on ``p_{t-1}`` with an
    intercept; ``"pooled"`` centres both lags on the overall mean.  The two
    agree asymptotically; only ``"ols"`` is exact on noiseless paths.
    """
    p = np.asarray(p_series, dtype=float)
    if p.size < 3:
        raise LengthError("need at least three values")
    lead, lag = p[1:], p[:-1]
    if method == "ols":
        lead_c, lag_c = lead - lead.mean(), lag - lag.mean()
    elif method == "pooled":
        centre = p.mean()
        lead_c, lag_c = lead - centre, lag - centre
    else:
        raise ValueError(f"unknown method {method!r}")
    denom = float(np.dot(lag_c, lag_c))
    if denom <= 1e-300 or np.ptp(p) == 0:
        raise DegenerateError("constant probability series")
    raw = float(np.dot(lead_c, lag_c)) / denom
    return RhoEstimate(min(max(raw, 0.0), 0.999), raw)


# --------------------------------------------------------------------------
# Count regressions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RegressionFit:
    coefficients: np.ndarray
    std_errors: np.ndarray
    dispersion_alpha: float
    alpha_std_error: float
    log_likelihood: float
    null_log_likelihood: float
    pseudo_r2: float
    llr_p_value: float
    converged: bool
    iterations: int
    model: str

    def predict_mean(self, x) -> np.ndarray:
        return np.exp(np.asarray(x, dtype=float) @ self.coefficients)


def _design(y, x) -> tuple[np.ndarray, np.ndarray]:
    y = as_counts(y)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != y.size:
        raise ValueError("x and y have different numbers of rows")
    if y.size < x.shape[1] + 2:
        raise LengthError("need at least columns(x) + 2 observations")
    if np.linalg.matrix_rank(x) < x.shape[1]:
        raise SingularDesignError("design matrix is rank deficient")
    return y, x


def _poisson_ll(y, mu) -> float:
    return float(np.sum(special.xlogy(y, mu) - mu - special.gammaln(y + 1)))


def _irls_poisson(y, x, max_iter=100, tol=1e-10):
    """Poisson IRLS; returns ``(beta, iterations)``."""
    mean = y.mean()
    if mean == 0:
        raise ConvergenceError("all counts zero; Poisson intercept diverges")
    beta = np.linalg.lstsq(x, np.log(y + 0.1 * mean + 1e-3), rcond=None)[0]
    ll_old = -np.inf
    for it in range(1, max_iter + 1):
        eta = x @ beta
        mu = np.exp(eta)
        z = eta + (y - mu) / mu
        w = mu
        xtw = x.T * w
        beta = np.linalg.solve(xtw @ x, xtw @ z)
        ll = _poisson_ll(y, np.exp(x @ beta))
        if abs(ll - ll_old) <= tol * (abs(ll) + 1):
            score = x.T @ (y - np.exp(x @ beta))
            if np.max(np.abs(score)) <= 1e-6 * max(1.0, np.abs(y).sum()):
                return beta, it
        ll_old = ll
    raise ConvergenceError(f"Poisson IRLS did not converge in {max_iter} iterations")


def _ragged_table(f, y_int: np.ndarray) -> np.ndarray:
    """``out[i] = sum_{k < y_i} f(k)`` via a cumulative table."""
    ymax = int(y_int.max()) if y_int.size else 0
    k = np.arange(ymax, dtype=float)
    table = np.concatenate([[0.0], np.cumsum(f(k))])
    return table[y_int]


def _h(z):
    """``log1p(z) - z/(1+z)``, accurate near zero."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-3
    series = z**2 / 2 - 2 * z**3 / 3 + 3 * z**4 / 4
    with np.errstate(invalid="ignore"):
        direct = np.log1p(z) - z / (1 + z)
    return np.where(small, series, direct)


def _k(z):
    """``z**2/(1+z)**2 - 2 h(z)``, accurate near zero."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-3
    series = -2 * z**3 / 3 + 3 * z**4 / 2 - 12 * z**5 / 5
    with np.errstate(invalid="ignore"):
        direct = z**2 / (1 + z) ** 2 - 2 * _h(np.where(small, 1.0, z))
    return np.where(small, series, direct)


def nb2_loglik(y, x, beta, alpha) -> float:
    y_int = y.astype(np.int64)
    mu = np.exp(x @ beta)
    if alpha == 0:
        return _poisson_ll(y, mu)
    z = alpha * mu
    rising = _ragged_table(lambda k: np.log1p(alpha * k), y_int)
    return float(np.sum(rising - special.gammaln(y + 1) + special.xlogy(y, mu)
                        - (y + 1 / alpha) * np.log1p(z)))


def _nb2_derivs(y, x, params):
    """Log-likelihood, gradient and Hessian of NB2 in ``(beta, log alpha)``."""
    beta, alpha = params[:-1], math.exp(params[-1])
    y_int = y.astype(np.int64)
    mu = np.exp(x @ beta)
    z = alpha * mu
    opz = 1 + z
    ll = nb2_loglik(y, x, beta, alpha)

    g_beta = x.T @ ((y - mu) / opz)
    s1 = _ragged_table(lambda k: k / (1 + alpha * k), y_int)
    s2 = _ragged_table(lambda k: k * k / (1 + alpha * k) ** 2, y_int)
    # dl/dalpha = sum s1 + h(z)/alpha^2 - y mu/(1+z)
    d_alpha = np.sum(s1 + _h(z) / alpha**2 - y * mu / opz)
    # d2l/dalpha2 = sum -s2 + k(z)/alpha^3 + y mu^2/(1+z)^2
    d2_alpha = np.sum(-s2 + _k(z) / alpha**3 + y * mu**2 / opz**2)
    d_beta_alpha = x.T @ (-mu * (y - mu) / opz**2)
    h_beta = -(x.T * (mu * (1 + alpha * y) / opz**2)) @ x

    p = params.size
    g = np.empty(p)
    g[:-1] = g_beta
    g[-1] = alpha * d_alpha
    h = np.empty((p, p))
    h[:-1, :-1] = h_beta
    h[:-1, -1] = h[-1, :-1] = alpha * d_beta_alpha
    h[-1, -1] = alpha * alpha * d2_alpha + alpha * d_alpha
    return ll, g, h


def _fit_nb2(y, x, beta0, max_iter=200, tol=1e-8):
    """Newton ascent for NB2 from a Poisson start.  Returns ``None`` at the alpha -> 0 boundary."""
    mu = np.exp(x @ beta0)
    alpha0 = max(np.sum((y - mu) ** 2 - y) / np.sum(mu**2), 1e-2)
    params = np.append(beta0, math.log(alpha0))
    n = y.size
    ll, g, h = _nb2_derivs(y, x, params)
    for it in range(1, max_iter + 1):
        if np.linalg.norm(g) / n <= tol:
            return params, ll, h, it - 1
        try:
            step = -np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            step = g / n
        if step @ g <= 0:
            step = g / (n * max(1.0, np.abs(h).max() / n))
        step[-1] = max(min(step[-1], 5.0), -5.0)
        t = 1.0
        while t > 1e-12:
            cand = params + t * step
            ll_c, g_c, h_c = _nb2_derivs(y, x, cand)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            raise ConvergenceError("NB2 line search failed")
        params, ll, g, h = cand, ll_c, g_c, h_c
        if params[-1] < math.log(1e-10):
            return None
    raise ConvergenceError(f"NB2 Newton did not converge in {max_iter} iterations")


def _poisson_se(x, beta) -> np.ndarray:
    mu = np.exp(x @ beta)
    info = (x.T * mu) @ x
    return np.sqrt(np.diag(np.linalg.inv(info)))


def _chi2_sf(stat: float, df: int) -> float:
    return float(special.gammaincc(df / 2.0, stat / 2.0)) if stat > 0 else 1.0


def poisson_regression(y, x) -> RegressionFit:
    """Poisson log-link regression by iteratively reweighted least squares."""
    y, x = _design(y, x)
    beta, iters = _irls_poisson(y, x)
    ll = _poisson_ll(y, np.exp(x @ beta))
    ll_null = poisson_mle(y)[1]
    slopes = x.shape[1] - 1
    stat = max(0.0, 2 * (ll - ll_null))
    return RegressionFit(
        coefficients=beta, std_errors=_poisson_se(x, beta), dispersion_alpha=0.0,
        alpha_std_error=math.nan, log_likelihood=ll, null_log_likelihood=ll_null,
        pseudo_r2=1 - ll / ll_null if ll_null != 0 else 0.0,
        llr_p_value=_chi2_sf(stat, slopes) if slopes else 1.0,
        converged=True, iterations=iters, model="poisson")


def _nb2_core(y, x):
    """``(beta, alpha, ll, se_beta, se_alpha, iterations)``; alpha = 0 at the boundary."""
    beta_p, iters_p = _irls_poisson(y, x)
    mu = np.exp(x @ beta_p)
    # Score of alpha at zero: positive iff the data are overdispersed relative to the fit.
    if np.sum((y - mu) ** 2 - y) <= 0:
        return beta_p, 0.0, _poisson_ll(y, mu), _poisson_se(x, beta_p), math.nan, iters_p
    fitted = _fit_nb2(y, x, beta_p)
    if fitted is None:
        return beta_p, 0.0, _poisson_ll(y, mu), _poisson_se(x, beta_p), math.nan, iters_p
    params, ll, h, iters = fitted
    cov = np.linalg.inv(-h)
    se = np.sqrt(np.abs(np.diag(cov)))
    alpha = math.exp(params[-1])
    return params[:-1], alpha, ll, se[:-1], alpha * se[-1], iters


def nb_regression(y, x) -> RegressionFit:
    """NB2 regression: ``mu = exp(x beta)``, ``Var = mu + alpha mu**2``, joint MLE over
    ``(beta, alpha >= 0)``; pseudo-R2 and LLR against the intercept-only NB2 model."""
    y, x = _design(y, x)
    beta, alpha, ll, se, se_alpha, iters = _nb2_core(y, x)
    ones = np.ones((y.size, 1))
    ll_null = _nb2_core(y, ones)[2]
    slopes = x.shape[1] - 1
    stat = max(0.0, 2 * (ll - ll_null))
    return RegressionFit(
        coefficients=beta, std_errors=se, dispersion_alpha=alpha, alpha_std_error=se_alpha,
        log_likelihood=ll, null_log_likelihood=ll_null,
        pseudo_r2=1 - ll / ll_null if ll_null != 0 else 0.0,
        llr_p_value=_chi2_sf(stat, slopes) if slopes else 1.0,
        converged=True, iterations=iters, model="nb2")
