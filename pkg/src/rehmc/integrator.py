"""Leapfrog integration of Hamiltonian dynamics.

One step of size eps maps (theta0, p0) to (theta1, p1) via

    p_half = p0 + (eps/2) grad log pi(theta0)
    theta1 = theta0 + eps M^-1 p_half
    p1     = p_half + (eps/2) grad log pi(theta1)

costing exactly one new gradient evaluation because the step reuses the
gradient cached on the incoming point.  The map is volume preserving and,
composed with momentum negation, exactly reversible.
"""

from __future__ import annotations

import math

import numpy as np

from .phase import MassMatrix, PhasePoint
from .targets import TargetDensity


class DivergenceError(RuntimeError):
    """Non-finite density or gradient encountered at a proposed position.

    ``step_index`` is 1-based within the trajectory that raised (0 for a bare
    single step).  ``theta`` is the offending position.
    """

    def __init__(self, theta: np.ndarray, step_index: int = 0):
        super().__init__(f"divergent leapfrog step at index {step_index}")
        self.theta = theta
        self.step_index = step_index


def leapfrog_step(
    point: PhasePoint, eps: float, target: TargetDensity, mass: MassMatrix
) -> PhasePoint:
    """One leapfrog step of (signed) size eps; raises DivergenceError on blow-up."""
    half = 0.5 * eps
    p_half = point.momentum + half * point.grad
    theta1 = point.theta + eps * mass.apply_inverse(p_half)
    logp1, grad1 = target.value_and_grad(theta1)
    if not math.isfinite(logp1) or not np.all(np.isfinite(grad1)):
        raise DivergenceError(theta1)
    p1 = p_half + half * grad1
    return PhasePoint(theta1, p1, logp1, grad1, logp1 - mass.kinetic_energy(p1))


def simulate_trajectory(
    point: PhasePoint,
    eps: float,
    n_steps: int,
    target: TargetDensity,
    mass: MassMatrix,
) -> list[PhasePoint]:
    """All K intermediate states of a K-step trajectory, in step order.

    Divergence at step k propagates with that index attached; states before k
    are discarded with the exception (callers wanting truncation run the loop
    themselves).
    """
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    states = []
    z = point
    for k in range(1, n_steps + 1):
        try:
            z = leapfrog_step(z, eps, target, mass)
        except DivergenceError as err:
            raise DivergenceError(err.theta, step_index=k) from None
        states.append(z)
    return states
