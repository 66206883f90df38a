"""Target distributions: log densities, gradients, and known-truth accessors.

Every sampler in this package consumes a ``TargetDensity``: a frozen bundle of
callables evaluating the unnormalized log density and its gradient on R^d.
Gaussian targets additionally expose analytic truths (moments, quantiles,
eigenstructure) through ``GaussianSpec`` so benchmark error can be measured
against exact values.  Additive constants in log densities are dropped
consistently; only differences ever matter to the samplers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh
from scipy.special import digamma, expit, polygamma
from scipy.stats import norm


class TargetError(ValueError):
    """Raised for invalid target construction or evaluation at invalid points."""


@dataclass(frozen=True)
class TargetDensity:
    """Unnormalized log density on R^d with gradient.

    ``value_and_grad`` evaluates both in one pass; it is the only entry point
    the integrator's hot loop uses, so factories should supply a fused
    implementation whenever sharing work between the two is possible.
    """

    dim: int
    log_density: Callable[[np.ndarray], float]
    grad_log_density: Callable[[np.ndarray], np.ndarray]
    value_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]] = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise TargetError(f"target dimension must be >= 1, got {self.dim}")
        if self.value_and_grad is None:
            ld, gld = self.log_density, self.grad_log_density
            object.__setattr__(
                self, "value_and_grad", lambda theta: (ld(theta), gld(theta))
            )

    def validate_point(self, theta: np.ndarray) -> np.ndarray:
        """Check shape and finiteness of a candidate point; returns it as float64."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.dim,):
            raise TargetError(
                f"point has shape {theta.shape}, target dimension is {self.dim}"
            )
        if not np.all(np.isfinite(theta)):
            raise TargetError("point has non-finite coordinates")
        return theta


# ---------------------------------------------------------------------------
# Gaussian targets with analytic truth
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianSpec:
    """Mean-zero Gaussian, in one of three shapes: iid, diagonal, or dense.

    Acts as the analytic oracle for benchmark experiments: moments, marginal
    quantiles, eigenstructure, and exact sampling are all available.
    """

    kind: str
    dim: int
    variances: Optional[np.ndarray] = None
    covariance: Optional[np.ndarray] = None
    _chol: Optional[np.ndarray] = field(default=None, repr=False)

    @staticmethod
    def iid_standard(dim: int) -> "GaussianSpec":
        if dim < 1:
            raise TargetError("dim must be >= 1")
        return GaussianSpec(kind="iid", dim=dim, variances=np.ones(dim))

    @staticmethod
    def diagonal(variances) -> "GaussianSpec":
        v = np.asarray(variances, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise TargetError("variances must be a non-empty 1-d vector")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise TargetError("variances must be finite and strictly positive")
        return GaussianSpec(kind="diagonal", dim=v.size, variances=v)

    @staticmethod
    def dense(covariance) -> "GaussianSpec":
        c = np.asarray(covariance, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise TargetError("covariance must be a square matrix")
        if not np.allclose(c, c.T, atol=1e-12 * max(1.0, float(np.abs(c).max()))):
            raise TargetError("covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(c)
        except np.linalg.LinAlgError as err:
            raise TargetError(
                f"covariance is not positive definite (Cholesky failed: {err})"
            ) from err
        return GaussianSpec(kind="dense", dim=c.shape[0], covariance=c, _chol=chol)

    # -- truth accessors ----------------------------------------------------

    def mean(self) -> np.ndarray:
        return np.zeros(self.dim)

    def marginal_variances(self) -> np.ndarray:
        if self.kind == "dense":
            return np.diag(self.covariance).copy()
        return self.variances.copy()

    def marginal_quantile(self, q: float) -> np.ndarray:
        """Per-coordinate quantile of the marginal N(0, sigma_i^2)."""
        if not 0.0 < q < 1.0:
            raise TargetError(f"quantile level must be in (0, 1), got {q}")
        z = norm.ppf(q)
        return z * np.sqrt(self.marginal_variances())

    def covariance_matrix(self) -> np.ndarray:
        if self.kind == "dense":
            return self.covariance.copy()
        return np.diag(self.variances)

    def eigenpairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues (descending) and matching eigenvector columns of the covariance."""
        if self.kind == "dense":
            w, v = eigh(self.covariance)
            order = np.argsort(w)[::-1]
            return w[order], v[:, order]
        order = np.argsort(self.variances)[::-1]
        vecs = np.eye(self.dim)[:, order]
        return self.variances[order].copy(), vecs

    def sample(self, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        """Exact draws, shape (size, dim)."""
        z = rng.standard_normal((size, self.dim))
        if self.kind == "dense":
            return z @ self._chol.T
        return z * np.sqrt(self.variances)


def make_gaussian(spec: GaussianSpec) -> TargetDensity:
    """Target density for a ``GaussianSpec``: log pi(theta) = -theta' Sigma^-1 theta / 2."""
    if spec.kind in ("iid", "diagonal"):
        inv_var = 1.0 / spec.variances

        def value_and_grad(theta: np.ndarray) -> tuple[float, np.ndarray]:
            s = theta * inv_var
            return -0.5 * float(theta @ s), -s

        return TargetDensity(
            dim=spec.dim,
            log_density=lambda theta: -0.5 * float(theta @ (theta * inv_var)),
            grad_log_density=lambda theta: -(theta * inv_var),
            value_and_grad=value_and_grad,
        )

    factor = cho_factor(spec.covariance, lower=True)

    def value_and_grad_dense(theta: np.ndarray) -> tuple[float, np.ndarray]:
        s = cho_solve(factor, theta)
        return -0.5 * float(theta @ s), -s

    return TargetDensity(
        dim=spec.dim,
        log_density=lambda theta: value_and_grad_dense(theta)[0],
        grad_log_density=lambda theta: value_and_grad_dense(theta)[1],
        value_and_grad=value_and_grad_dense,
    )


# ---------------------------------------------------------------------------
# Skewed 1-d target with analytic moments (negative-control experiments)
# ---------------------------------------------------------------------------


def make_log_gamma(shape: float, rate: float) -> tuple[TargetDensity, dict]:
    """Distribution of theta = log X for X ~ Gamma(shape, rate).

    log pi(theta) = shape * theta - rate * exp(theta), Jacobian included.
    Returns the target and a dict of analytic truths: E[theta] = psi(shape) -
    log(rate), Var[theta] = psi'(shape).  Strongly skewed for small shapes,
    which makes it a sharp probe for estimator bias.
    """
    if shape <= 0 or rate <= 0:
        raise TargetError("shape and rate must be positive")

    def value_and_grad(theta: np.ndarray) -> tuple[float, np.ndarray]:
        t = theta[0]
        with np.errstate(over="ignore"):
            et = np.exp(t)
        return shape * t - rate * et, np.array([shape - rate * et])

    target = TargetDensity(
        dim=1,
        log_density=lambda theta: value_and_grad(theta)[0],
        grad_log_density=lambda theta: value_and_grad(theta)[1],
        value_and_grad=value_and_grad,
    )
    truth = {
        "mean": float(digamma(shape) - np.log(rate)),
        "variance": float(polygamma(1, shape)),
    }
    return target, truth


# ---------------------------------------------------------------------------
# Hierarchical logistic regression over (log sigma, beta)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogisticRegressionData:
    """Design matrix and binary labels, with column provenance labels.

    Columns: standardized raw predictors first, then all pairwise interaction
    products of those standardized columns (i < j order), then a final
    intercept column of ones.
    """

    design: np.ndarray
    labels: np.ndarray
    column_kinds: tuple[str, ...]

    @property
    def n_predictors(self) -> int:
        return self.design.shape[1]


def build_logistic_design(raw: np.ndarray, labels: np.ndarray) -> LogisticRegressionData:
    """Standardize raw columns, append pairwise interactions and an intercept.

    With r raw columns the design has r + r(r-1)/2 + 1 columns.  Construction
    is deterministic: identical inputs yield bit-identical matrices.
    """
    raw = np.asarray(raw, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if raw.ndim != 2:
        raise TargetError("raw predictor array must be 2-d")
    n, r = raw.shape
    if labels.shape != (n,):
        raise TargetError(f"labels must have shape ({n},), got {labels.shape}")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise TargetError("labels must be 0/1")
    mu = raw.mean(axis=0)
    sd = raw.std(axis=0)
    if np.any(sd == 0):
        raise TargetError("raw predictor column with zero variance cannot be standardized")
    std = (raw - mu) / sd

    cols = [std]
    kinds = ["raw"] * r
    for i in range(r):
        for j in range(i + 1, r):
            cols.append((std[:, i] * std[:, j])[:, None])
            kinds.append("interaction")
    cols.append(np.ones((n, 1)))
    kinds.append("intercept")
    design = np.hstack(cols)
    return LogisticRegressionData(
        design=design, labels=labels, column_kinds=tuple(kinds)
    )


def load_logistic_csv(path) -> LogisticRegressionData:
    """Read a numeric CSV whose first column is the 0/1 label, rest raw predictors."""
    table = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if table.shape[1] < 2:
        raise TargetError("CSV needs a label column plus at least one predictor")
    return build_logistic_design(raw=table[:, 1:], labels=table[:, 0])


def make_logistic_model(data: LogisticRegressionData) -> TargetDensity:
    """Posterior over (log sigma, beta) with beta ~ N(0, sigma^2 I), flat prior on sigma.

    log pi = sum_i [y_i x_i'beta - log(1 + exp(x_i'beta))]
             - |beta|^2 / (2 sigma^2) - q log sigma + log sigma

    where q is the number of predictors and the trailing + log sigma is the
    Jacobian of the log-sigma parameterization.  Parameter layout: theta[0] =
    log sigma, theta[1:] = beta.
    """
    X = data.design
    y = data.labels
    q = X.shape[1]

    def value_and_grad(theta: np.ndarray) -> tuple[float, np.ndarray]:
        t = theta[0]
        beta = theta[1:]
        eta = X @ beta
        # sum_i [y eta - log(1 + e^eta)], stable for large |eta|
        loglik = float(y @ eta - np.logaddexp(0.0, eta).sum())
        inv_s2 = np.exp(-2.0 * t)
        bb = float(beta @ beta)
        logp = loglik - 0.5 * bb * inv_s2 - q * t + t
        grad = np.empty(q + 1)
        grad[0] = bb * inv_s2 - q + 1.0
        grad[1:] = X.T @ (y - expit(eta)) - beta * inv_s2
        return logp, grad

    return TargetDensity(
        dim=q + 1,
        log_density=lambda theta: value_and_grad(theta)[0],
        grad_log_density=lambda theta: value_and_grad(theta)[1],
        value_and_grad=value_and_grad,
    )


# ---------------------------------------------------------------------------
# Stochastic volatility over log s, innovation precision integrated out
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReturnsSeries:
    """Positive closing values of length n+1 and their n log-return increments."""

    closes: np.ndarray
    log_returns: np.ndarray

    @staticmethod
    def from_closes(closes) -> "ReturnsSeries":
        c = np.asarray(closes, dtype=np.float64)
        if c.ndim != 1 or c.size < 2:
            raise TargetError("need at least two closing values")
        if not np.all(np.isfinite(c)) or np.any(c <= 0):
            raise TargetError("closing values must be finite and positive")
        return ReturnsSeries(closes=c, log_returns=np.diff(np.log(c)))


def load_returns_csv(path) -> ReturnsSeries:
    """Read a single-column CSV of positive closing values."""
    closes = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=1)
    return ReturnsSeries.from_closes(closes.ravel())


def make_sv_model(
    series: ReturnsSeries,
    walk_scale: float = 100.0,
    precision_shape: float = 0.5,
    precision_rate: float = 0.5,
    s0_mean: float = 0.1,
) -> TargetDensity:
    """Stochastic volatility posterior over t = log s = (log s_0, ..., log s_n).

    With returns r_1..r_n the model is r_i ~ N(0, s_i^2), with a random walk on
    log volatility whose scaled increments e_i = walk_scale * (log s_i -
    log s_{i-1}) are iid N(0, 1/tau).  tau ~ Gamma(precision_shape,
    precision_rate) is integrated out, leaving

        log pi(t) = sum_i [ -t_i - r_i^2 exp(-2 t_i) / 2 ]
                    - (shape + n/2) log(rate + sum_i e_i^2 / 2)
                    - exp(t_0) / s0_mean + t_0

    The last two terms are the s_0 ~ Exponential(mean s0_mean) prior with its
    log-parameterization Jacobian.  Dimension is n + 1: one log volatility per
    closing value.
    """
    if walk_scale <= 0 or precision_shape <= 0 or precision_rate <= 0 or s0_mean <= 0:
        raise TargetError("sv model hyperparameters must be positive")
    r = series.log_returns
    n = r.size
    r2 = r * r
    k = precision_shape + 0.5 * n
    s0_rate = 1.0 / s0_mean

    def value_and_grad(theta: np.ndarray) -> tuple[float, np.ndarray]:
        t0 = theta[0]
        tv = theta[1:]
        with np.errstate(over="ignore"):
            inv2 = np.exp(-2.0 * tv)
            et0 = np.exp(t0)
        obs = float(-tv.sum() - 0.5 * (r2 @ inv2))
        e = walk_scale * np.diff(theta)
        denom = precision_rate + 0.5 * float(e @ e)
        logp = obs - k * np.log(denom) + (-s0_rate * et0 + t0)

        grad = np.empty(n + 1)
        grad[1:] = -1.0 + r2 * inv2
        grad[0] = -s0_rate * et0 + 1.0
        # random-walk term: d/dt_j of -k log(denom)
        coeff = -k / denom * walk_scale
        grad[1:] += coeff * e
        grad[:-1] -= coeff * e
        return logp, grad

    return TargetDensity(
        dim=n + 1,
        log_density=lambda theta: value_and_grad(theta)[0],
        grad_log_density=lambda theta: value_and_grad(theta)[1],
        value_and_grad=value_and_grad,
    )
