"""Hamiltonian Monte Carlo with trajectory recycling.

A standard HMC iteration simulates L leapfrog steps and keeps only the
endpoint.  The recycled iteration additionally subjects each intermediate
state F^k(theta0, p0) to its own Metropolis test against the start point,

    (theta_k, p_k) = F^k(theta0, p0)   with prob  min{1, pi(F^k) / pi(z0)}
                   = (theta0, p0)      otherwise,

and emits the decided slots as extra posterior draws.  The chain itself still
moves to the slot-L outcome, so recycling never alters the next-state
trajectory - a property made testable by giving each source of randomness its
own seeded stream (see ``ChainRngs``).

Two recycling modes:

* ``"traversed"`` (default): simulate exactly L steps and recycle slots 1..L.
  Batch sizes then vary with L and the pooled unit-weight estimator
  normalizes by the total number of draws.
* ``"full-span"``: always simulate the maximal supported step count K of the
  path-length distribution, recycle slots 1..K, and use slot L as the next
  state.

A ``SubsetScheme`` can thin the recycled slots; it draws from its own stream,
independent of the chain, so thinned estimators stay unbiased.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .integrator import DivergenceError, leapfrog_step
from .phase import MassMatrix, PhasePoint, make_phase_point, with_momentum
from .targets import TargetDensity, TargetError

RECYCLE_TRAVERSED = "traversed"
RECYCLE_FULL_SPAN = "full-span"


class ChainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ChainRngs:
    """Four independent generator streams for one chain.

    ``trajectory`` drives momentum refresh and path-length draws (and, for
    tree-based samplers, slice/direction/selection randomness); ``accept`` is
    reserved for the endpoint accept test; ``recycle`` for the intermediate
    slot tests and recycled-draw selection; ``subset`` for slot-subset
    choices.  Because the streams are separate, switching recycling on or off
    leaves the next-state stream untouched bit for bit.
    """

    trajectory: np.random.Generator
    accept: np.random.Generator
    recycle: np.random.Generator
    subset: np.random.Generator

    @staticmethod
    def from_seed(master_seed: int, chain_index: int = 0) -> "ChainRngs":
        """Streams for chain ``chain_index`` under a master seed, collision-free."""
        gens = [
            np.random.default_rng(
                np.random.SeedSequence(master_seed, spawn_key=(chain_index, k))
            )
            for k in range(4)
        ]
        return ChainRngs(*gens)


@dataclass(frozen=True)
class PathLengthDistribution:
    """Distribution of the leapfrog step count L on {1, 2, ...}."""

    kind: str
    fixed_steps: int = 0
    lo: int = 0
    hi: int = 0
    tau_lo: float = 0.0
    tau_hi: float = 0.0

    @staticmethod
    def fixed(n_steps: int) -> "PathLengthDistribution":
        if n_steps < 1:
            raise ChainConfigError("fixed path length must be >= 1")
        return PathLengthDistribution("fixed", fixed_steps=n_steps)

    @staticmethod
    def uniform_steps(lo: int, hi: int) -> "PathLengthDistribution":
        if not 1 <= lo <= hi:
            raise ChainConfigError("need 1 <= lo <= hi for uniform path lengths")
        return PathLengthDistribution("uniform", lo=lo, hi=hi)

    @staticmethod
    def time_jitter(tau_lo: float, tau_hi: float) -> "PathLengthDistribution":
        """Integration time drawn uniformly from [tau_lo, tau_hi], then divided by eps."""
        if not 0.0 < tau_lo <= tau_hi:
            raise ChainConfigError("need 0 < tau_lo <= tau_hi for time jitter")
        return PathLengthDistribution("time-jitter", tau_lo=tau_lo, tau_hi=tau_hi)

    def sample(self, rng: np.random.Generator, eps: float) -> int:
        if self.kind == "fixed":
            return self.fixed_steps
        if self.kind == "uniform":
            return int(rng.integers(self.lo, self.hi + 1))
        tau = rng.uniform(self.tau_lo, self.tau_hi)
        return max(1, round(tau / eps))

    def max_steps(self, eps: float) -> int:
        """Largest step count the distribution can produce at this eps."""
        if self.kind == "fixed":
            return self.fixed_steps
        if self.kind == "uniform":
            return self.hi
        return max(1, round(self.tau_hi / eps))


@dataclass(frozen=True)
class SubsetScheme:
    """Which recycled slots to keep, drawn independently of the chain.

    ``full`` keeps every slot; ``random(m)`` keeps m slots uniformly without
    replacement (all slots when m >= L); ``strided(exponent)`` keeps every
    2^exponent-th slot.  A stride larger than L yields an empty selection,
    which is a valid (empty) recycled batch.
    """

    kind: str = "full"
    m: int = 0
    exponent: int = 0

    @staticmethod
    def full() -> "SubsetScheme":
        return SubsetScheme("full")

    @staticmethod
    def random(m: int) -> "SubsetScheme":
        if m < 1:
            raise ChainConfigError("random subset size must be >= 1")
        return SubsetScheme("random", m=m)

    @staticmethod
    def strided(exponent: int) -> "SubsetScheme":
        if exponent < 0:
            raise ChainConfigError("stride exponent must be >= 0")
        return SubsetScheme("strided", exponent=exponent)

    def select(self, n_slots: int, rng: np.random.Generator) -> np.ndarray:
        """Sorted 1-based slot indices within {1, ..., n_slots}."""
        if self.kind == "full":
            return np.arange(1, n_slots + 1)
        if self.kind == "random":
            size = min(self.m, n_slots)
            picked = rng.choice(np.arange(1, n_slots + 1), size=size, replace=False)
            return np.sort(picked)
        stride = 2 ** self.exponent
        return np.arange(stride, n_slots + 1, stride)


@dataclass(slots=True)
class RecycledDraw:
    """One recycled posterior draw: a position, its weight, and provenance."""

    theta: np.ndarray
    weight: float
    slot: int
    iteration: int = -1
    momentum: Optional[np.ndarray] = None


@dataclass(slots=True)
class IterationDiagnostics:
    accept_stat: float = 0.0
    energy_error: float = 0.0
    grad_evals: int = 0
    steps: int = 0
    depth: int = -1
    n_acceptable: int = -1
    diverged: bool = False
    max_depth_hit: bool = False


@dataclass(slots=True)
class IterationBatch:
    """Everything one transition produces: next state, recycled draws, diagnostics."""

    next_state: PhasePoint
    recycled: list
    diagnostics: IterationDiagnostics


def accept_probability(z_from: PhasePoint, z_to: PhasePoint) -> float:
    """min{1, pi(z_to) / pi(z_from)}, computed in the log domain."""
    if z_to.log_joint == -math.inf:
        return 0.0
    return math.exp(min(0.0, z_to.log_joint - z_from.log_joint))


def _accept(delta: float, rng: np.random.Generator) -> bool:
    """Metropolis coin for a log ratio; draws no uniform when acceptance is certain."""
    return delta >= 0.0 or rng.random() < math.exp(delta)


def hmc_iteration_standard(
    state: PhasePoint,
    plen: PathLengthDistribution,
    eps: float,
    target: TargetDensity,
    mass: MassMatrix,
    rngs: ChainRngs,
) -> IterationBatch:
    """Plain HMC transition: refresh momentum, take L steps, accept the endpoint."""
    n_steps = plen.sample(rngs.trajectory, eps)
    z0 = with_momentum(state, mass.draw(rngs.trajectory), mass)
    z = z0
    max_err = 0.0
    completed = 0
    diverged = False
    for _ in range(n_steps):
        try:
            z = leapfrog_step(z, eps, target, mass)
        except DivergenceError:
            diverged = True
            break
        completed += 1
        err = abs(z.log_joint - z0.log_joint)
        if err > max_err:
            max_err = err
    diag = IterationDiagnostics(
        energy_error=max_err, grad_evals=completed, steps=completed, diverged=diverged
    )
    if diverged:
        return IterationBatch(next_state=z0, recycled=[], diagnostics=diag)
    delta = z.log_joint - z0.log_joint
    diag.accept_stat = math.exp(min(0.0, delta))
    next_state = z if _accept(delta, rngs.accept) else z0
    return IterationBatch(next_state=next_state, recycled=[], diagnostics=diag)


def hmc_iteration_recycled(
    state: PhasePoint,
    plen: PathLengthDistribution,
    eps: float,
    target: TargetDensity,
    mass: MassMatrix,
    rngs: ChainRngs,
    mode: str = RECYCLE_TRAVERSED,
    subset: Optional[SubsetScheme] = None,
    store_momentum: bool = False,
) -> IterationBatch:
    """HMC transition that also emits per-slot recycled draws.

    Slot k is decided by its own accept test; the slot-L test doubles as the
    endpoint decision and is therefore the only one drawn from the accept
    stream.  On divergence the trajectory is truncated, surviving slots keep
    their tests, truncated slots reject to the start point, and the endpoint
    counts as rejected.  All draws carry unit weight.
    """
    if mode not in (RECYCLE_TRAVERSED, RECYCLE_FULL_SPAN):
        raise ChainConfigError(f"unknown recycling mode {mode!r}")
    if subset is None:
        subset = SubsetScheme.full()
    endpoint_slot = plen.sample(rngs.trajectory, eps)
    z0 = with_momentum(state, mass.draw(rngs.trajectory), mass)
    n_slots = endpoint_slot if mode == RECYCLE_TRAVERSED else plen.max_steps(eps)

    trajectory = []
    z = z0
    max_err = 0.0
    diverged = False
    for _ in range(n_slots):
        try:
            z = leapfrog_step(z, eps, target, mass)
        except DivergenceError:
            diverged = True
            break
        trajectory.append(z)
        err = abs(z.log_joint - z0.log_joint)
        if err > max_err:
            max_err = err
    survived = len(trajectory)

    chosen = subset.select(n_slots, rngs.subset)

    accept_stat = 0.0
    endpoint_accepted = False
    if survived >= endpoint_slot:
        delta = trajectory[endpoint_slot - 1].log_joint - z0.log_joint
        accept_stat = math.exp(min(0.0, delta))
        endpoint_accepted = _accept(delta, rngs.accept)

    draws = []
    for k in chosen:
        k = int(k)
        if k == endpoint_slot:
            ok = endpoint_accepted
        elif k <= survived:
            ok = _accept(trajectory[k - 1].log_joint - z0.log_joint, rngs.recycle)
        else:
            ok = False
        zk = trajectory[k - 1] if ok else z0
        draws.append(
            RecycledDraw(
                theta=zk.theta,
                weight=1.0,
                slot=k,
                momentum=zk.momentum if store_momentum else None,
            )
        )

    next_state = trajectory[endpoint_slot - 1] if endpoint_accepted else z0
    diag = IterationDiagnostics(
        accept_stat=accept_stat,
        energy_error=max_err,
        grad_evals=survived,
        steps=survived,
        diverged=diverged,
    )
    return IterationBatch(next_state=next_state, recycled=draws, diagnostics=diag)


@dataclass(frozen=True)
class HmcKernel:
    """Bound HMC transition: target, geometry, and recycling policy in one object."""

    target: TargetDensity
    mass: MassMatrix
    eps: float
    plen: PathLengthDistribution
    recycle: str = "none"
    subset: SubsetScheme = field(default_factory=SubsetScheme.full)
    store_momentum: bool = False

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ChainConfigError("step size must be positive")
        if self.recycle not in ("none", RECYCLE_TRAVERSED, RECYCLE_FULL_SPAN):
            raise ChainConfigError(f"unknown recycle setting {self.recycle!r}")

    def iterate(self, state: PhasePoint, rngs: ChainRngs) -> IterationBatch:
        if self.recycle == "none":
            return hmc_iteration_standard(
                state, self.plen, self.eps, self.target, self.mass, rngs
            )
        return hmc_iteration_recycled(
            state,
            self.plen,
            self.eps,
            self.target,
            self.mass,
            rngs,
            mode=self.recycle,
            subset=self.subset,
            store_momentum=self.store_momentum,
        )


@dataclass
class ChainDiagnostics:
    """Per-iteration diagnostic arrays covering the whole run, burn-in included."""

    accept_stat: np.ndarray
    energy_error: np.ndarray
    grad_evals: np.ndarray
    steps: np.ndarray
    depth: np.ndarray
    n_acceptable: np.ndarray
    diverged: np.ndarray
    max_depth_hit: np.ndarray

    def divergence_rate(self) -> float:
        return float(self.diverged.mean()) if self.diverged.size else 0.0

    def total_grad_evals(self) -> int:
        return int(self.grad_evals.sum())


@dataclass
class ChainResult:
    """Post-burn-in states and recycled draws of one chain, as flat arrays."""

    states: np.ndarray
    recycled_thetas: np.ndarray
    recycled_weights: np.ndarray
    recycled_iterations: np.ndarray
    recycled_slots: np.ndarray
    diagnostics: ChainDiagnostics
    final_state: PhasePoint


def run_chain(
    kernel,
    initial_theta: np.ndarray,
    n_iterations: int,
    burn_in: int = 0,
    seed: int = 0,
    chain_index: int = 0,
    grad_budget: int | None = None,
    budget_reserve: int = 0,
) -> ChainResult:
    """Drive any kernel with an ``iterate(state, rngs)`` method for N transitions.

    Burn-in iterations run under the same streams but are excluded from the
    returned state and recycled-draw arrays.  Identical (seed, chain_index,
    config) reproduce the result exactly.

    With ``grad_budget`` set, the loop stops before any iteration that could
    push the total gradient-evaluation count past the budget;
    ``budget_reserve`` is the worst case a single iteration may cost (e.g.
    2^(max_depth+1) for the doubling sampler).  The budget must leave at
    least one post-burn-in iteration.
    """
    if n_iterations < 1:
        raise ChainConfigError("n_iterations must be >= 1")
    if not 0 <= burn_in < n_iterations:
        raise ChainConfigError("need 0 <= burn_in < n_iterations")
    target: TargetDensity = kernel.target
    theta0 = target.validate_point(initial_theta)
    rngs = ChainRngs.from_seed(seed, chain_index)
    state = make_phase_point(theta0, np.zeros(target.dim), target, kernel.mass)
    if not math.isfinite(state.log_density):
        raise TargetError("initial point has non-finite log density")

    dim = target.dim
    kept = n_iterations - burn_in
    states = np.empty((kept, dim))
    rec_theta: list[np.ndarray] = []
    rec_w: list[float] = []
    rec_iter: list[int] = []
    rec_slot: list[int] = []
    acc = np.empty(n_iterations)
    eerr = np.empty(n_iterations)
    gev = np.empty(n_iterations, dtype=np.int64)
    stp = np.empty(n_iterations, dtype=np.int64)
    dep = np.empty(n_iterations, dtype=np.int64)
    nacc = np.empty(n_iterations, dtype=np.int64)
    div = np.empty(n_iterations, dtype=bool)
    mdh = np.empty(n_iterations, dtype=bool)

    done = 0
    evals = 0
    for i in range(n_iterations):
        if grad_budget is not None and evals + budget_reserve > grad_budget:
            break
        batch = kernel.iterate(state, rngs)
        state = batch.next_state
        d = batch.diagnostics
        acc[i] = d.accept_stat
        eerr[i] = d.energy_error
        gev[i] = d.grad_evals
        stp[i] = d.steps
        dep[i] = d.depth
        nacc[i] = d.n_acceptable
        div[i] = d.diverged
        mdh[i] = d.max_depth_hit
        evals += d.grad_evals
        done = i + 1
        if i >= burn_in:
            states[i - burn_in] = state.theta
            for draw in batch.recycled:
                rec_theta.append(draw.theta)
                rec_w.append(draw.weight)
                rec_iter.append(i)
                rec_slot.append(draw.slot)

    if done <= burn_in:
        raise ChainConfigError("gradient budget exhausted during burn-in")
    if done < n_iterations:
        states = states[: done - burn_in]
        acc, eerr = acc[:done], eerr[:done]
        gev, stp, dep = gev[:done], stp[:done], dep[:done]
        nacc, div, mdh = nacc[:done], div[:done], mdh[:done]

    if rec_theta:
        recycled_thetas = np.vstack(rec_theta)
        recycled_weights = np.asarray(rec_w)
        recycled_iterations = np.asarray(rec_iter, dtype=np.int64)
        recycled_slots = np.asarray(rec_slot, dtype=np.int64)
    else:
        recycled_thetas = np.empty((0, dim))
        recycled_weights = np.empty(0)
        recycled_iterations = np.empty(0, dtype=np.int64)
        recycled_slots = np.empty(0, dtype=np.int64)

    return ChainResult(
        states=states,
        recycled_thetas=recycled_thetas,
        recycled_weights=recycled_weights,
        recycled_iterations=recycled_iterations,
        recycled_slots=recycled_slots,
        diagnostics=ChainDiagnostics(acc, eerr, gev, stp, dep, nacc, div, mdh),
        final_state=state,
    )
