"""No-U-Turn sampler with recycling of acceptable trajectory states.

Each iteration draws a slice level u under the joint density of the start
point, then doubles a leapfrog trajectory left or right at random until the
endpoints turn back toward each other, a state diverges, or a depth cap is
hit.  Within the final tree T the acceptable set

    A = { (theta, p) in T : pi(theta, p) > u }

always contains the start point, and the next chain state is drawn uniformly
from A via single-element reservoir merges, exactly, by induction over the
joins.  Recycling strategies then extract extra draws from the same tree:

* ``simple(K)``: K states uniformly without replacement from A (all of A when
  it is smaller than K);
* ``rao-blackwell``: every state of A, weighted 1/|A|;
* ``evenly(K)``: K states spread across the tree by a recursive allocation
  that hands each subtree a share proportional to its acceptable count,
  rounding stochastically (see ``recycle_evenly``);
* ``all-leaves``: every leapfrog state generated, ignoring A.  This scheme is
  deliberately biased and exists as a negative control for tests; do not use
  it for estimation.

Divergence (non-finite values, or a joint-density drop beyond ``delta_max``)
terminates the subtree that produced it; the failed subtree is discarded and
doubling stops, which preserves exactness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hmc import (
    ChainConfigError,
    ChainRngs,
    IterationBatch,
    IterationDiagnostics,
    RecycledDraw,
)
from .integrator import DivergenceError, leapfrog_step
from .phase import MassMatrix, PhasePoint, with_momentum
from .targets import TargetDensity


@dataclass(frozen=True)
class SliceVariable:
    """Log slice level and the joint log density it was drawn under."""

    log_u: float
    log_joint_start: float


def draw_slice(z0: PhasePoint, rng: np.random.Generator) -> SliceVariable:
    """log u = log pi(z0) - Exp(1); the start state is acceptable by construction."""
    return SliceVariable(z0.log_joint - rng.exponential(), z0.log_joint)


def uturn(left: PhasePoint, right: PhasePoint, mass: MassMatrix) -> bool:
    """True when the span from left to right has begun folding back on itself.

    Strict inequalities: zero dot products (e.g. coincident endpoints) do not
    terminate.
    """
    d = right.theta - left.theta
    if float(d @ mass.apply_inverse(left.momentum)) < 0.0:
        return True
    return float(d @ mass.apply_inverse(right.momentum)) < 0.0


class NutsTree:
    """Node of the doubling tree: endpoints, acceptable count, and structure.

    ``children`` holds the two joined subtrees in time order (earlier half
    first); leaves carry their phase point.  ``candidate`` is the uniform
    next-state reservoir element for the subtree.  Failed (terminated) nodes
    are structural sentinels only and never become part of a finished tree.
    """

    __slots__ = (
        "left",
        "right",
        "n_acceptable",
        "candidate",
        "depth",
        "terminated",
        "diverged",
        "children",
        "leaf_state",
        "leaf_acceptable",
    )

    def __init__(
        self,
        left,
        right,
        n_acceptable,
        candidate,
        depth,
        terminated,
        diverged=False,
        children=None,
        leaf_state=None,
        leaf_acceptable=False,
    ):
        self.left = left
        self.right = right
        self.n_acceptable = n_acceptable
        self.candidate = candidate
        self.depth = depth
        self.terminated = terminated
        self.diverged = diverged
        self.children = children
        self.leaf_state = leaf_state
        self.leaf_acceptable = leaf_acceptable

    def acceptable_states(self) -> list[PhasePoint]:
        """Acceptable leaf states in trajectory time order."""
        out: list[PhasePoint] = []
        stack = [self]
        while stack:
            node = stack.pop()
            if node.children is None:
                if node.leaf_acceptable:
                    out.append(node.leaf_state)
            else:
                stack.append(node.children[1])
                stack.append(node.children[0])
        return out


class _BuildStats:
    """Mutable per-iteration accumulators threaded through the recursion."""

    __slots__ = ("sum_accept", "n_leaves", "n_leapfrog", "max_energy_error", "all_leaves")

    def __init__(self, collect_leaves: bool = False):
        self.sum_accept = 0.0
        self.n_leaves = 0
        self.n_leapfrog = 0
        self.max_energy_error = 0.0
        self.all_leaves = [] if collect_leaves else None


def _failed(anchor: PhasePoint, depth: int, diverged: bool) -> NutsTree:
    return NutsTree(anchor, anchor, 0, None, depth, True, diverged=diverged)


def build_tree(
    z: PhasePoint,
    direction: int,
    depth: int,
    eps: float,
    target: TargetDensity,
    mass: MassMatrix,
    slice_var: SliceVariable,
    rng: np.random.Generator,
    stats: _BuildStats,
    delta_max: float = 1000.0,
) -> NutsTree:
    """Grow a subtree of 2^depth states from z in the given direction.

    The first failing half short-circuits the second, so a terminated subtree
    reports only the leapfrog steps it actually took.
    """
    if depth == 0:
        stats.n_leapfrog += 1
        try:
            z1 = leapfrog_step(z, direction * eps, target, mass)
        except DivergenceError:
            stats.n_leaves += 1
            return _failed(z, 0, diverged=True)
        joint0 = slice_var.log_joint_start
        stats.sum_accept += math.exp(min(0.0, z1.log_joint - joint0))
        stats.n_leaves += 1
        err = abs(z1.log_joint - joint0)
        if err > stats.max_energy_error:
            stats.max_energy_error = err
        if stats.all_leaves is not None:
            stats.all_leaves.append(z1)
        if err > delta_max and z1.log_joint < joint0:
            return _failed(z, 0, diverged=True)
        acceptable = z1.log_joint > slice_var.log_u
        return NutsTree(
            z1,
            z1,
            1 if acceptable else 0,
            z1 if acceptable else None,
            0,
            False,
            leaf_state=z1,
            leaf_acceptable=acceptable,
        )

    first = build_tree(
        z, direction, depth - 1, eps, target, mass, slice_var, rng, stats, delta_max
    )
    if first.terminated:
        return _failed(z, depth, diverged=first.diverged)
    start2 = first.right if direction > 0 else first.left
    second = build_tree(
        start2, direction, depth - 1, eps, target, mass, slice_var, rng, stats, delta_max
    )
    if second.terminated:
        return _failed(z, depth, diverged=second.diverged)

    if direction > 0:
        left, right = first.left, second.right
        children = (first, second)
    else:
        left, right = second.left, first.right
        children = (second, first)

    if uturn(left, right, mass):
        return _failed(z, depth, diverged=False)

    n = first.n_acceptable + second.n_acceptable
    if n > 0:
        pick_second = rng.random() * n < second.n_acceptable
        candidate = second.candidate if pick_second else first.candidate
    else:
        candidate = None
    return NutsTree(left, right, n, candidate, depth, False, children=children)


@dataclass(frozen=True)
class RecycleStrategy:
    """How to harvest extra draws from a finished tree."""

    kind: str = "none"
    k: int = 0

    @staticmethod
    def none() -> "RecycleStrategy":
        return RecycleStrategy("none")

    @staticmethod
    def simple(k: int) -> "RecycleStrategy":
        if k < 1:
            raise ChainConfigError("simple recycling needs k >= 1")
        return RecycleStrategy("simple", k=k)

    @staticmethod
    def rao_blackwell() -> "RecycleStrategy":
        return RecycleStrategy("rao-blackwell")

    @staticmethod
    def evenly(k: int) -> "RecycleStrategy":
        if k < 1:
            raise ChainConfigError("evenly-spread recycling needs k >= 1")
        return RecycleStrategy("evenly", k=k)

    @staticmethod
    def all_leaves() -> "RecycleStrategy":
        """Biased negative control: recycle every generated state, ignoring A."""
        return RecycleStrategy("all-leaves")


def draw_uniform_acceptable(tree: NutsTree, rng: np.random.Generator) -> PhasePoint:
    """Redraw the next-state selection on a finished tree.

    Replays the reservoir merges top-down with fresh randomness: at each
    node a child is entered with probability proportional to its acceptable
    count, so each acceptable state is returned with probability exactly
    1/|A|.  Lets selection uniformity be checked by replaying one tree many
    times.
    """
    if tree.terminated or tree.n_acceptable < 1:
        raise ChainConfigError("cannot draw from a terminated or empty tree")
    node = tree
    while node.children is not None:
        first, second = node.children
        if rng.random() * node.n_acceptable < first.n_acceptable:
            node = first
        else:
            node = second
    return node.leaf_state


def _alloc_evenly(
    node: NutsTree, n_draws: int, rng: np.random.Generator, out: list[PhasePoint]
) -> None:
    if n_draws <= 0:
        return
    if node.children is None:
        out.extend([node.leaf_state] * n_draws)
        return
    first, second = node.children
    share = n_draws * first.n_acceptable / node.n_acceptable
    n_first = int(share)
    frac = share - n_first
    if frac > 0.0 and rng.random() < frac:
        n_first += 1
    _alloc_evenly(first, n_first, rng, out)
    _alloc_evenly(second, n_draws - n_first, rng, out)


def recycle_evenly(tree: NutsTree, k: int, rng: np.random.Generator) -> list[RecycledDraw]:
    """K draws spread over the tree's acceptable states, repeats allowed.

    At each internal node the left child receives floor(w) + Bernoulli(w -
    floor(w)) draws, w = K' * a_left / (a_left + a_right), so every acceptable
    state is selected K/|A| times in expectation.  A single-leaf tree returns
    K copies of its state.  Draw order follows trajectory time order.
    """
    if k < 1:
        raise ChainConfigError("recycle count must be >= 1")
    if tree.terminated or tree.n_acceptable < 1:
        raise ChainConfigError("cannot recycle from a terminated or empty tree")
    picked: list[PhasePoint] = []
    _alloc_evenly(tree, k, rng, picked)
    w = 1.0 / k
    return [
        RecycledDraw(theta=z.theta, weight=w, slot=i + 1) for i, z in enumerate(picked)
    ]


def _draws_from_tree(
    tree: NutsTree,
    strategy: RecycleStrategy,
    rng: np.random.Generator,
    stats: _BuildStats,
    store_momentum: bool,
) -> list[RecycledDraw]:
    if strategy.kind == "none":
        return []
    if strategy.kind == "evenly":
        draws = recycle_evenly(tree, strategy.k, rng)
        if store_momentum:
            # recycle_evenly returns positions only; re-walk for momenta is not
            # supported under the evenly scheme
            raise ChainConfigError("store_momentum is not supported with evenly recycling")
        return draws
    if strategy.kind == "all-leaves":
        leaves = stats.all_leaves or []
        states = [tree.acceptable_states()[0]] if not leaves else leaves
        w = 1.0 / len(states)
        return [
            RecycledDraw(
                theta=z.theta,
                weight=w,
                slot=i + 1,
                momentum=z.momentum if store_momentum else None,
            )
            for i, z in enumerate(states)
        ]

    acceptable = tree.acceptable_states()
    n = len(acceptable)
    if strategy.kind == "simple":
        size = min(strategy.k, n)
        idx = rng.choice(n, size=size, replace=False)
        w = 1.0 / size
        return [
            RecycledDraw(
                theta=acceptable[j].theta,
                weight=w,
                slot=i + 1,
                momentum=acceptable[j].momentum if store_momentum else None,
            )
            for i, j in enumerate(idx)
        ]
    if strategy.kind == "rao-blackwell":
        weights = np.full(n, 1.0 / n)
        # pin the total weight to exactly 1.0
        if n > 1:
            weights[-1] = 1.0 - float(weights[:-1].sum())
        else:
            weights[0] = 1.0
        return [
            RecycledDraw(
                theta=z.theta,
                weight=float(weights[i]),
                slot=i + 1,
                momentum=z.momentum if store_momentum else None,
            )
            for i, z in enumerate(acceptable)
        ]
    raise ChainConfigError(f"unknown recycle strategy {strategy.kind!r}")


def nuts_iteration(
    state: PhasePoint,
    eps: float,
    target: TargetDensity,
    mass: MassMatrix,
    rngs: ChainRngs,
    max_depth: int = 10,
    delta_max: float = 1000.0,
    strategy: RecycleStrategy = RecycleStrategy.none(),
    store_momentum: bool = False,
) -> tuple[IterationBatch, NutsTree]:
    """One NUTS transition; returns the batch and the finished tree.

    Build randomness (momentum, slice, directions, reservoir merges) comes
    from the trajectory stream; recycled-draw selection comes from the
    recycle stream, so the chain path is identical whichever strategy runs.
    """
    if max_depth < 1:
        raise ChainConfigError("max_depth must be >= 1")
    z0 = with_momentum(state, mass.draw(rngs.trajectory), mass)
    slice_var = draw_slice(z0, rngs.trajectory)
    stats = _BuildStats(collect_leaves=strategy.kind == "all-leaves")
    if stats.all_leaves is not None:
        stats.all_leaves.append(z0)

    root = NutsTree(
        z0, z0, 1, z0, 0, False, leaf_state=z0, leaf_acceptable=True
    )
    diverged = False
    max_depth_hit = False
    depth = 0
    while True:
        if depth >= max_depth:
            max_depth_hit = True
            break
        direction = 1 if rngs.trajectory.random() < 0.5 else -1
        start = root.right if direction > 0 else root.left
        sub = build_tree(
            start,
            direction,
            depth,
            eps,
            target,
            mass,
            slice_var,
            rngs.trajectory,
            stats,
            delta_max,
        )
        if sub.terminated:
            diverged = diverged or sub.diverged
            break
        if direction > 0:
            left, right = root.left, sub.right
            children = (root, sub)
        else:
            left, right = sub.left, root.right
            children = (sub, root)
        n = root.n_acceptable + sub.n_acceptable
        if rngs.trajectory.random() * n < sub.n_acceptable:
            candidate = sub.candidate
        else:
            candidate = root.candidate
        root = NutsTree(left, right, n, candidate, depth + 1, False, children=children)
        depth += 1
        if uturn(root.left, root.right, mass):
            break

    draws = _draws_from_tree(root, strategy, rngs.recycle, stats, store_momentum)
    diag = IterationDiagnostics(
        accept_stat=stats.sum_accept / stats.n_leaves if stats.n_leaves else 1.0,
        energy_error=stats.max_energy_error,
        grad_evals=stats.n_leapfrog,
        steps=stats.n_leapfrog,
        depth=depth,
        n_acceptable=root.n_acceptable,
        diverged=diverged,
        max_depth_hit=max_depth_hit,
    )
    return IterationBatch(next_state=root.candidate, recycled=draws, diagnostics=diag), root


@dataclass(frozen=True)
class NutsKernel:
    """Bound NUTS transition for ``run_chain``."""

    target: TargetDensity
    mass: MassMatrix
    eps: float
    max_depth: int = 10
    delta_max: float = 1000.0
    strategy: RecycleStrategy = RecycleStrategy.none()
    store_momentum: bool = False

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ChainConfigError("step size must be positive")
        if self.max_depth < 1:
            raise ChainConfigError("max_depth must be >= 1")

    def iterate(self, state: PhasePoint, rngs: ChainRngs) -> IterationBatch:
        batch, _ = nuts_iteration(
            state,
            self.eps,
            self.target,
            self.mass,
            rngs,
            max_depth=self.max_depth,
            delta_max=self.delta_max,
            strategy=self.strategy,
            store_momentum=self.store_momentum,
        )
        return batch
