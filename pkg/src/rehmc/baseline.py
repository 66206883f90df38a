"""Windowed multi-proposal HMC baseline.

Each iteration refreshes momentum at z0, picks L uniformly from {0, ..., K},
and forms the window of K+1 leapfrog states

    F^{-L}(z0), ..., z0, ..., F^{K-L}(z0)

so the current state sits at position L.  The chain moves by a shift proposal
to the far end of the window (offset ``window_offset(K, L)``), accepted by a
standard ratio test, while K recycled draws are taken from the window with
probabilities proportional to the joint densities of its states.  A
Rao-Blackwell variant instead returns every window state weighted by its
normalized joint density.

Backward states use the time-reversal identity F^{-j} = P F^j P with P the
momentum flip, so only the forward integrator is ever run.  A divergence
while building the window collapses it to {z0} for that iteration and is
flagged in the diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hmc import (
    ChainConfigError,
    ChainRngs,
    IterationBatch,
    IterationDiagnostics,
    RecycledDraw,
    accept_probability,
    _accept,
)
from .integrator import DivergenceError, leapfrog_step
from .phase import MassMatrix, PhasePoint, negate_momentum, with_momentum
from .targets import TargetDensity


def window_offset(n_steps: int, start_position: int) -> int:
    """Shift from the start position to the far end of the window.

    For a window of n_steps+1 states with the current state at position
    ``start_position``, the proposal is the endpoint farther away: offset
    n_steps - start_position when that is at least start_position, otherwise
    -start_position.
    """
    forward = n_steps - start_position
    return forward if forward >= start_position else -start_position


def _softmax(log_values: np.ndarray) -> np.ndarray:
    shifted = log_values - log_values.max()
    w = np.exp(shifted)
    return w / w.sum()


def calderhead_iteration(
    state: PhasePoint,
    eps: float,
    n_steps: int,
    target: TargetDensity,
    mass: MassMatrix,
    rngs: ChainRngs,
    rao_blackwell: bool = False,
    store_momentum: bool = False,
) -> IterationBatch:
    """One windowed-baseline transition with K recycled draws."""
    z0 = with_momentum(state, mass.draw(rngs.trajectory), mass)
    start_position = int(rngs.trajectory.integers(0, n_steps + 1))

    window: list[PhasePoint] = [z0]
    steps_done = 0
    diverged = False
    try:
        # backward half: F^{-j}(z0) = P F^j P z0, built farthest-first
        back: list[PhasePoint] = []
        point = negate_momentum(z0)
        for _ in range(start_position):
            point = leapfrog_step(point, eps, target, mass)
            steps_done += 1
            back.append(negate_momentum(point))
        back.reverse()
        forward: list[PhasePoint] = []
        point = z0
        for _ in range(n_steps - start_position):
            point = leapfrog_step(point, eps, target, mass)
            steps_done += 1
            forward.append(point)
        window = back + [z0] + forward
    except DivergenceError:
        diverged = True
        window = [z0]

    joints = np.array([p.log_joint for p in window])
    weights = _softmax(joints)

    if diverged:
        next_state = z0
        accept_stat = 0.0
    else:
        proposal_index = start_position + window_offset(n_steps, start_position)
        proposal = window[proposal_index]
        delta = proposal.log_joint - z0.log_joint
        accept_stat = accept_probability(z0, proposal)
        next_state = proposal if _accept(delta, rngs.accept) else z0

    if rao_blackwell:
        w = weights.copy()
        if len(w) > 1:
            w[-1] = 1.0 - float(w[:-1].sum())
        recycled = [
            RecycledDraw(
                theta=p.theta,
                weight=float(w[i]),
                slot=i + 1,
                momentum=p.momentum if store_momentum else None,
            )
            for i, p in enumerate(window)
        ]
    else:
        idx = rngs.recycle.choice(len(window), size=n_steps, p=weights)
        recycled = [
            RecycledDraw(
                theta=window[j].theta,
                weight=1.0,
                slot=i + 1,
                momentum=window[j].momentum if store_momentum else None,
            )
            for i, j in enumerate(idx)
        ]

    energy_error = float(np.max(np.abs(joints - z0.log_joint)))
    diag = IterationDiagnostics(
        accept_stat=accept_stat,
        energy_error=energy_error,
        grad_evals=steps_done,
        steps=steps_done,
        n_acceptable=len(window),
        diverged=diverged,
    )
    return IterationBatch(next_state=next_state, recycled=recycled, diagnostics=diag)


@dataclass(frozen=True)
class CalderheadKernel:
    """Bound windowed-baseline transition for ``run_chain``."""

    target: TargetDensity
    mass: MassMatrix
    eps: float
    n_steps: int
    rao_blackwell: bool = False
    store_momentum: bool = False

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ChainConfigError("step size must be positive")
        if self.n_steps < 1:
            raise ChainConfigError("window needs at least one step")

    def iterate(self, state: PhasePoint, rngs: ChainRngs) -> IterationBatch:
        return calderhead_iteration(
            state,
            self.eps,
            self.n_steps,
            self.target,
            self.mass,
            rngs,
            rao_blackwell=self.rao_blackwell,
            store_momentum=self.store_momentum,
        )
