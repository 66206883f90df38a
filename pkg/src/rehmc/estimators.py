"""Weighted estimators and squared-error-based effective sample size.

Recycled chains produce draws with per-draw weights; every statistic here is
the weighted population form, normalized by the total weight, so constant
weights reduce to the plain estimators.  The quantile is the left-continuous
inverse of the weighted empirical CDF (agrees with the ``inverted_cdf``
method on equal weights).

Effective sample size is defined through mean squared error over replicate
chains:

    ess = n * mse_iid(n) / mse_chain

where mse_iid(n) is the squared error an estimator would have from n
independent draws of the target.  That reference is available analytically
for Gaussian targets and by simulation otherwise.

Principal-component summaries (top eigenvalue, and the angle between the
estimated top direction and the true leading eigenspace) use an explicit
power iteration so the linear-algebra path in the comparison harness is
fully deterministic.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats as sps


class EstimatorError(ValueError):
    pass


def _check_weights(values: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape[0] != weights.shape[0]:
        raise EstimatorError("values and weights must have matching length")
    if values.shape[0] == 0:
        raise EstimatorError("need at least one draw")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise EstimatorError("weights must be finite and nonnegative")
    total = weights.sum()
    if total <= 0:
        raise EstimatorError("total weight must be positive")
    return values, weights


def weighted_mean(values: np.ndarray, weights: np.ndarray) -> float:
    values, weights = _check_weights(values, weights)
    return float(weights @ values / weights.sum())


def weighted_variance(values: np.ndarray, weights: np.ndarray) -> float:
    """Population form: total weight in the denominator, no df correction."""
    values, weights = _check_weights(values, weights)
    m = weights @ values / weights.sum()
    return float(weights @ (values - m) ** 2 / weights.sum())


def weighted_quantile(values: np.ndarray, weights: np.ndarray, q: float) -> float:
    """Smallest value whose cumulative normalized weight reaches q."""
    if not 0.0 < q < 1.0:
        raise EstimatorError("q must lie in (0, 1)")
    values, weights = _check_weights(values, weights)
    order = np.argsort(values, kind="stable")
    sorted_values = values[order]
    cum = np.cumsum(weights[order])
    cum /= cum[-1]
    idx = int(np.searchsorted(cum, q, side="left"))
    if idx >= len(sorted_values):
        idx = len(sorted_values) - 1
    return float(sorted_values[idx])


def scalar_statistic(name: str, values: np.ndarray, weights: np.ndarray) -> float:
    if name == "mean":
        return weighted_mean(values, weights)
    if name == "variance":
        return weighted_variance(values, weights)
    if name.startswith("q"):
        return weighted_quantile(values, weights, float(name[1:]))
    raise EstimatorError(f"unknown statistic {name!r}")


def mse(estimates: np.ndarray, truth: float) -> float:
    estimates = np.asarray(estimates, dtype=float)
    if estimates.size == 0:
        raise EstimatorError("need at least one replicate")
    return float(np.mean((estimates - truth) ** 2))


def ess_from_mse(mse_chain: float, mse_iid_at_n: float, n: int) -> float:
    """Draws an independent sampler would need to match mse_chain."""
    if mse_chain <= 0:
        raise EstimatorError("chain mse must be positive")
    return n * mse_iid_at_n / mse_chain


def gaussian_iid_mse(statistic: str, variance: float, n: int) -> float:
    """Closed-form mse of the population estimators under n iid N(mu, variance).

    mean: variance/n.  variance: variance^2 (2n-1)/n^2 (the population
    estimator's variance plus its bias squared).  quantile q: the asymptotic
    q(1-q) variance / (n phi(z_q)^2).
    """
    if n < 1:
        raise EstimatorError("n must be >= 1")
    if statistic == "mean":
        return variance / n
    if statistic == "variance":
        return variance**2 * (2 * n - 1) / n**2
    if statistic.startswith("q"):
        q = float(statistic[1:])
        z = sps.norm.ppf(q)
        return q * (1.0 - q) * variance / (n * sps.norm.pdf(z) ** 2)
    raise EstimatorError(f"unknown statistic {statistic!r}")


def iid_mse_by_simulation(
    draw,
    statistic_fn,
    truth: float,
    n: int,
    n_replicates: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Monte Carlo estimate of the iid reference mse, with its standard error.

    ``draw(rng, size)`` must return independent target draws; the statistic is
    applied to each replicate of n draws.
    """
    if n_replicates < 2:
        raise EstimatorError("need at least two replicates")
    sq = np.empty(n_replicates)
    for r in range(n_replicates):
        sample = draw(rng, n)
        sq[r] = (statistic_fn(sample) - truth) ** 2
    est = float(sq.mean())
    se = float(sq.std(ddof=1) / math.sqrt(n_replicates))
    return est, se


def weighted_covariance(draws: np.ndarray, weights: np.ndarray) -> np.ndarray:
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2:
        raise EstimatorError("draws must be (n, dim)")
    _, weights = _check_weights(draws[:, 0], np.asarray(weights, dtype=float))
    w = weights / weights.sum()
    m = w @ draws
    centered = draws - m
    cov = (centered * w[:, None]).T @ centered
    return 0.5 * (cov + cov.T)


def power_iteration_top(
    matrix: np.ndarray, tol: float = 1e-10, max_iters: int = 10_000
) -> tuple[float, np.ndarray]:
    """Leading eigenpair of a symmetric PSD matrix by power iteration.

    Deterministic start vector ones + 1e-3 * arange, normalized; stops when
    the residual ||A v - lambda v|| falls below tol * max(1, |lambda|).
    """
    a = np.asarray(matrix, dtype=float)
    dim = a.shape[0]
    v = np.ones(dim) + 1e-3 * np.arange(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iters):
        av = a @ v
        norm = np.linalg.norm(av)
        if norm == 0.0:
            return 0.0, v
        v = av / norm
        lam = float(v @ a @ v)
        if np.linalg.norm(a @ v - lam * v) <= tol * max(1.0, abs(lam)):
            return lam, v
    raise EstimatorError("power iteration failed to converge")


def leading_subspace_dim(eigvals: np.ndarray) -> int:
    """Number of leading eigenvalues within a factor of two of the largest."""
    eigvals = np.asarray(eigvals, dtype=float)
    if eigvals.size == 0:
        raise EstimatorError("need at least one eigenvalue")
    return int(np.sum(eigvals >= eigvals[0] / 2.0))


def subspace_angle(vec: np.ndarray, basis: np.ndarray) -> float:
    """Angle in radians between vec and the span of the (orthonormal) basis columns."""
    v = np.asarray(vec, dtype=float)
    v = v / np.linalg.norm(v)
    proj = np.linalg.norm(basis.T @ v)
    return float(np.arccos(min(1.0, proj)))


def pca_statistics(
    draws: np.ndarray,
    weights: np.ndarray,
    true_eigvals: np.ndarray,
    true_eigvecs: np.ndarray,
) -> tuple[float, float]:
    """(top-eigenvalue estimate, angle of the top direction to the true leading subspace).

    ``true_eigvals`` descending with ``true_eigvecs`` columns matching; the
    leading subspace spans every true direction with eigenvalue at least half
    the largest, which keeps the angle well defined when top eigenvalues are
    close.
    """
    cov = weighted_covariance(draws, weights)
    lam, vec = power_iteration_top(cov)
    ell = leading_subspace_dim(true_eigvals)
    angle = subspace_angle(vec, np.asarray(true_eigvecs)[:, :ell])
    return lam, angle


def esjd_score(tau: float, squared_jumps: np.ndarray) -> float:
    """Computing-time-normalized expected squared jump distance: E||dtheta||^2 / sqrt(tau)."""
    if tau <= 0:
        raise EstimatorError("path time must be positive")
    squared_jumps = np.asarray(squared_jumps, dtype=float)
    if squared_jumps.size == 0:
        raise EstimatorError("need at least one jump")
    return float(squared_jumps.mean() / math.sqrt(tau))


def choose_tau(taus: np.ndarray, scores: np.ndarray) -> float:
    """Highest-scoring path time; ties resolve to the smallest tau."""
    taus = np.asarray(taus, dtype=float)
    scores = np.asarray(scores, dtype=float)
    if taus.shape != scores.shape or taus.size == 0:
        raise EstimatorError("taus and scores must be one nonempty matching shape")
    order = np.argsort(taus, kind="stable")
    taus, scores = taus[order], scores[order]
    return float(taus[int(np.argmax(scores))])


def integrated_autocorr_time(x: np.ndarray) -> float:
    """Initial-positive-sequence estimate of the integrated autocorrelation time.

    Sums adjacent-lag autocorrelation pairs while they remain positive; for
    white noise the result is close to 1.  Used to approximate the iid mse
    reference for targets without a closed form: mse_iid(n) ~ mse_chain * n /
    (n / tau).
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        raise EstimatorError("need at least four points")
    centered = x - x.mean()
    # autocovariance via FFT, normalized to rho_0 = 1
    size = 1
    while size < 2 * n:
        size *= 2
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n].real / n
    if acov[0] <= 0:
        return 1.0
    rho = acov / acov[0]
    total = 0.0
    m = 0
    while 2 * m + 1 < n:
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0.0:
            break
        total += pair
        m += 1
    return float(max(2.0 * total - 1.0, 1.0))
