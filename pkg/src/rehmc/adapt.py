"""Step-size and mass-matrix adaptation.

Step size follows the dual-averaging recursion on log eps with a fixed
shrinkage point mu = log(10 * eps_initial):

    h_bar_t   = (1 - 1/(t + t0)) h_bar_{t-1} + (delta - alpha_t)/(t + t0)
    log eps_t = mu - sqrt(t)/gamma * h_bar_t
    log ebar_t = t^-kappa log eps_t + (1 - t^-kappa) log ebar_{t-1}

with gamma = 0.05, t0 = 10, kappa = 0.75, and alpha_t the iteration's
acceptance statistic.  The averaged value ebar is the tuned step size.

The mass matrix is set from a shrunk estimate of the posterior covariance,

    cov_hat = N/(N + 5) * cov_emp + 5/(N + 5) * 1e-3 * I,

where N counts the draws that entered the empirical estimate; the chain then
runs with inverse mass equal to cov_hat.  ``tune_chain`` wires the phases
together: a short dual-averaging run under identity mass, a fixed-step
window that accumulates the covariance (optionally from recycled draws), and
a second dual-averaging run under the new mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .hmc import ChainConfigError, ChainRngs
from .phase import MassMatrix, PhasePoint, make_phase_point
from .targets import TargetDensity


@dataclass(frozen=True)
class DualAveragingState:
    t: int
    mu: float
    log_eps: float
    log_eps_bar: float
    h_bar: float
    target_accept: float
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75

    @property
    def eps(self) -> float:
        """Step size to run the next iteration at."""
        return math.exp(self.log_eps)

    @property
    def eps_averaged(self) -> float:
        """Final tuned step size (iterate average)."""
        return math.exp(self.log_eps_bar)


def da_init(eps0: float, target_accept: float = 0.7) -> DualAveragingState:
    if eps0 <= 0:
        raise ChainConfigError("initial step size must be positive")
    if not 0.0 < target_accept < 1.0:
        raise ChainConfigError("target acceptance must lie in (0, 1)")
    log_eps0 = math.log(eps0)
    return DualAveragingState(
        t=0,
        mu=math.log(10.0 * eps0),
        log_eps=log_eps0,
        log_eps_bar=log_eps0,
        h_bar=0.0,
        target_accept=target_accept,
    )


def da_update(state: DualAveragingState, accept_stat: float) -> DualAveragingState:
    t = state.t + 1
    eta = 1.0 / (t + state.t0)
    h_bar = (1.0 - eta) * state.h_bar + eta * (state.target_accept - accept_stat)
    log_eps = state.mu - math.sqrt(t) / state.gamma * h_bar
    w = t ** (-state.kappa)
    log_eps_bar = w * log_eps + (1.0 - w) * state.log_eps_bar
    return replace(state, t=t, h_bar=h_bar, log_eps=log_eps, log_eps_bar=log_eps_bar)


class CovarianceAccumulator:
    """Streaming weighted mean/covariance over position draws.

    Weighted Welford updates; ``covariance`` is the population form (total
    weight in the denominator).  ``count`` is the number of draws added, which
    is the N used for shrinkage regardless of the weights.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ChainConfigError("dimension must be >= 1")
        self.dim = dim
        self.count = 0
        self.total_weight = 0.0
        self.mean = np.zeros(dim)
        self._m2 = np.zeros((dim, dim))

    def add(self, theta: np.ndarray, weight: float = 1.0) -> None:
        if weight <= 0.0:
            raise ChainConfigError("weights must be positive")
        x = np.asarray(theta, dtype=float)
        self.count += 1
        self.total_weight += weight
        delta = x - self.mean
        self.mean += (weight / self.total_weight) * delta
        self._m2 += weight * np.outer(delta, x - self.mean)

    def add_batch(self, thetas: np.ndarray, weights: np.ndarray | None = None) -> None:
        thetas = np.asarray(thetas, dtype=float)
        if weights is None:
            weights = np.ones(len(thetas))
        for x, w in zip(thetas, weights):
            self.add(x, float(w))

    def covariance(self) -> np.ndarray:
        if self.total_weight <= 0.0:
            return np.zeros((self.dim, self.dim))
        cov = self._m2 / self.total_weight
        return 0.5 * (cov + cov.T)

    def shrunk_covariance(
        self, prior_scale: float = 1e-3, regularization: float = 5.0
    ) -> np.ndarray:
        return shrink_covariance(
            self.covariance(), self.count, prior_scale, regularization
        )


def shrink_covariance(
    emp_cov: np.ndarray,
    n_samples: int,
    prior_scale: float = 1e-3,
    regularization: float = 5.0,
) -> np.ndarray:
    """Blend the empirical covariance toward a small multiple of the identity.

    N/(N + r) on the data, r/(N + r) on prior_scale * I.  At N = 0 the result
    is exactly prior_scale * I.
    """
    emp_cov = np.asarray(emp_cov, dtype=float)
    if emp_cov.ndim != 2 or emp_cov.shape[0] != emp_cov.shape[1]:
        raise ChainConfigError("covariance must be square")
    if n_samples < 0:
        raise ChainConfigError("sample count must be nonnegative")
    dim = emp_cov.shape[0]
    lam = n_samples / (n_samples + regularization)
    return lam * emp_cov + (1.0 - lam) * prior_scale * np.eye(dim)


@dataclass(frozen=True)
class TuningResult:
    eps: float
    mass: MassMatrix
    eps_identity: float
    covariance: np.ndarray
    theta: np.ndarray
    n_cov_samples: int


def _run_da_phase(state, kernel_factory, da, n_iters, rngs):
    for _ in range(n_iters):
        kernel = kernel_factory(da.eps)
        batch = kernel.iterate(state, rngs)
        da = da_update(da, batch.diagnostics.accept_stat)
        state = batch.next_state
    return state, da


def tune_chain(
    make_kernel,
    target: TargetDensity,
    initial_theta: np.ndarray,
    n_adapt: int,
    seed: int = 0,
    chain_index: int = 0,
    eps0: float = 0.1,
    target_accept: float = 0.7,
    da_iters_identity: int = 50,
    da_iters_mass: int = 75,
    make_cov_kernel=None,
) -> TuningResult:
    """Three-phase tuner: step size, covariance window, step size again.

    ``make_kernel(eps, mass)`` must return a kernel bound to those settings;
    ``make_cov_kernel`` (same signature, default ``make_kernel``) builds the
    kernel for the covariance window, e.g. one that recycles so the window
    sees more draws per iteration.  The N for shrinkage is the number of
    draws accumulated, recycled ones included.
    """
    if n_adapt < 0:
        raise ChainConfigError("n_adapt must be nonnegative")
    if make_cov_kernel is None:
        make_cov_kernel = make_kernel
    rngs = ChainRngs.from_seed(seed, chain_index)
    identity = MassMatrix.identity(target.dim)
    theta0 = np.asarray(initial_theta, dtype=float)
    state = make_phase_point(theta0, np.zeros(target.dim), target, identity)

    da = da_init(eps0, target_accept)
    state, da = _run_da_phase(
        state, lambda e: make_kernel(e, identity), da, da_iters_identity, rngs
    )
    eps_identity = da.eps_averaged

    acc = CovarianceAccumulator(target.dim)
    cov_kernel = make_cov_kernel(eps_identity, identity)
    for _ in range(n_adapt):
        batch = cov_kernel.iterate(state, rngs)
        if batch.recycled:
            for draw in batch.recycled:
                acc.add(draw.theta, draw.weight)
        else:
            acc.add(batch.next_state.theta)
        state = batch.next_state

    cov_hat = acc.shrunk_covariance()
    mass = MassMatrix.from_inverse(cov_hat)

    da2 = da_init(eps_identity, target_accept)
    # mass changed, so rebuild the phase point's cached gradient pairing
    state = make_phase_point(state.theta, np.zeros(target.dim), target, mass)
    state, da2 = _run_da_phase(
        state, lambda e: make_kernel(e, mass), da2, da_iters_mass, rngs
    )

    return TuningResult(
        eps=da2.eps_averaged,
        mass=mass,
        eps_identity=eps_identity,
        covariance=cov_hat,
        theta=state.theta,
        n_cov_samples=acc.count,
    )
