"""Phase space: mass matrices, momentum draws, and cached phase points.

A ``PhasePoint`` carries position, momentum, and three caches: the target log
density, its gradient, and the joint log density log pi(theta) - p'M^-1 p / 2.
Keeping the caches on the point is what lets one leapfrog step cost exactly
one new gradient evaluation.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .targets import TargetDensity


class MassMatrixError(ValueError):
    pass


class MassMatrix:
    """SPD momentum covariance M, supporting N(0, M) draws and M^-1 application.

    Three layouts: identity, diagonal (vector of momentum variances), and
    dense (full SPD matrix with cached Cholesky factor).  Instances are
    immutable and shared freely across chains.
    """

    __slots__ = ("kind", "dim", "diag", "_inv_diag", "_sqrt_diag", "matrix", "_chol", "_cho_factor")

    def __init__(self, kind: str, dim: int, diag=None, matrix=None):
        self.kind = kind
        self.dim = dim
        self.diag = diag
        self.matrix = matrix
        self._inv_diag = None if diag is None else 1.0 / diag
        self._sqrt_diag = None if diag is None else np.sqrt(diag)
        if matrix is not None:
            try:
                self._chol = np.linalg.cholesky(matrix)
            except np.linalg.LinAlgError as err:
                raise MassMatrixError(
                    f"dense mass matrix is not positive definite (Cholesky failed: {err})"
                ) from err
            self._cho_factor = cho_factor(matrix, lower=True)
        else:
            self._chol = None
            self._cho_factor = None

    @staticmethod
    def identity(dim: int) -> "MassMatrix":
        if dim < 1:
            raise MassMatrixError("dim must be >= 1")
        return MassMatrix("identity", dim)

    @staticmethod
    def diagonal(variances) -> "MassMatrix":
        v = np.asarray(variances, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise MassMatrixError("diagonal mass needs a non-empty 1-d variance vector")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise MassMatrixError("momentum variances must be finite and positive")
        return MassMatrix("diagonal", v.size, diag=v)

    @staticmethod
    def dense(matrix) -> "MassMatrix":
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise MassMatrixError("dense mass matrix must be square")
        if not np.allclose(m, m.T, atol=1e-12 * max(1.0, float(np.abs(m).max()))):
            raise MassMatrixError("dense mass matrix must be symmetric")
        return MassMatrix("dense", m.shape[0], matrix=m)

    @staticmethod
    def from_inverse(inverse) -> "MassMatrix":
        """Dense mass with M^-1 equal to the given SPD matrix (e.g. a fitted covariance)."""
        s = np.asarray(inverse, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise MassMatrixError("inverse mass matrix must be square")
        try:
            l = np.linalg.cholesky(s)
        except np.linalg.LinAlgError as err:
            raise MassMatrixError(
                f"inverse mass matrix is not positive definite (Cholesky failed: {err})"
            ) from err
        linv = solve_triangular(l, np.eye(s.shape[0]), lower=True)
        m = linv.T @ linv
        return MassMatrix.dense(0.5 * (m + m.T))

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        """One momentum sample p ~ N(0, M)."""
        z = rng.standard_normal(self.dim)
        if self.kind == "identity":
            return z
        if self.kind == "diagonal":
            return self._sqrt_diag * z
        return self._chol @ z

    def apply_inverse(self, v: np.ndarray) -> np.ndarray:
        # identity mass returns its argument unchanged: exact, no copy
        if self.kind == "identity":
            return v
        if self.kind == "diagonal":
            return v * self._inv_diag
        return cho_solve(self._cho_factor, v)

    def kinetic_energy(self, p: np.ndarray) -> float:
        """p' M^-1 p / 2."""
        if self.kind == "identity":
            return 0.5 * float(p @ p)
        if self.kind == "diagonal":
            return 0.5 * float(p @ (p * self._inv_diag))
        return 0.5 * float(p @ cho_solve(self._cho_factor, p))

    def inverse_matrix(self) -> np.ndarray:
        if self.kind == "identity":
            return np.eye(self.dim)
        if self.kind == "diagonal":
            return np.diag(self._inv_diag)
        return cho_solve(self._cho_factor, np.eye(self.dim))


class PhasePoint:
    """(theta, p) with cached log density, gradient, and joint log density."""

    __slots__ = ("theta", "momentum", "log_density", "grad", "log_joint")

    def __init__(self, theta, momentum, log_density, grad, log_joint):
        self.theta = theta
        self.momentum = momentum
        self.log_density = log_density
        self.grad = grad
        self.log_joint = log_joint

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return (
            f"PhasePoint(theta={self.theta!r}, momentum={self.momentum!r}, "
            f"log_joint={self.log_joint:.6g})"
        )


def make_phase_point(
    theta: np.ndarray,
    momentum: np.ndarray,
    target: TargetDensity,
    mass: MassMatrix,
) -> PhasePoint:
    """Evaluate the target once and assemble a fully cached phase point."""
    logp, grad = target.value_and_grad(theta)
    return PhasePoint(theta, momentum, logp, grad, logp - mass.kinetic_energy(momentum))


def with_momentum(point: PhasePoint, momentum: np.ndarray, mass: MassMatrix) -> PhasePoint:
    """Replace the momentum, reusing the position caches (no gradient evaluation)."""
    return PhasePoint(
        point.theta,
        momentum,
        point.log_density,
        point.grad,
        point.log_density - mass.kinetic_energy(momentum),
    )


def negate_momentum(point: PhasePoint, mass: Optional[MassMatrix] = None) -> PhasePoint:
    """Flip the momentum sign; the joint log density is even in p, so caches carry over."""
    return PhasePoint(
        point.theta, -point.momentum, point.log_density, point.grad, point.log_joint
    )


def draw_momentum(mass: MassMatrix, rng: np.random.Generator) -> np.ndarray:
    return mass.draw(rng)


def joint_log_density(point: PhasePoint) -> float:
    """log pi(theta) - p' M^-1 p / 2, read from the cache."""
    return point.log_joint
