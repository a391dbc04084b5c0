"""Occupancy evolution and per-challenge visit-count distributions.

Given an absorbing chain, this module answers: how often is a group of
states (e.g. all set-tagged states) visited while one challenge is
processed? The occupancy vector is evolved from the one-hot initial state
until the terminal mass reaches ``1 - epsilon``; visit counts are then
obtained from a joint (visit count, current state) recursion. The count
recursion is run at group level rather than per state: the chain occupies
exactly one state per step, so group members are mutually exclusive events
and the grouped construction is exact. A Monte Carlo trajectory sampler is
included as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chains import MarkovChainSpec, OpTag

#: Trailing pmf entries below this are dropped and tracked as truncated mass.
TRUNCATION_EPS = 1e-12

DEFAULT_EPSILON = 1e-5
DEFAULT_MAX_ITERS = 1_000_000


class ConvergenceError(RuntimeError):
    """Evolution failed to absorb within the iteration budget."""


@dataclass(eq=False)
class StateOccupancy:
    """Occupancy probabilities per iteration: ``probs[t, s]`` is the
    probability of being in state ``s`` at iteration ``t``.

    ``probs[0]`` is one-hot at the initial state and the final row carries
    terminal mass of at least ``1 - epsilon``. The source chain is kept so
    downstream visit-count analysis can replay the transition structure.
    """

    probs: np.ndarray
    converged_at: int
    chain: MarkovChainSpec

    @property
    def terminal_mass(self) -> float:
        terminal = sorted(self.chain.terminal_states)
        return float(self.probs[-1, terminal].sum())


def evolve(
    chain: MarkovChainSpec,
    epsilon: float = DEFAULT_EPSILON,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> StateOccupancy:
    """Evolve the one-hot initial vector until terminal mass >= 1 - epsilon.

    Raises ConvergenceError when the budget is exhausted, which signals an
    unreachable terminal or a near-periodic chain.
    """
    n = chain.n_states
    terminal = sorted(chain.terminal_states)
    v = np.zeros(n)
    v[chain.initial_state] = 1.0
    rows = [v]
    if v[terminal].sum() >= 1.0 - epsilon:
        return StateOccupancy(np.array(rows), 0, chain)
    matrix = chain.transition
    for t in range(1, max_iters + 1):
        v = v @ matrix
        rows.append(v)
        if v[terminal].sum() >= 1.0 - epsilon:
            return StateOccupancy(np.array(rows), t, chain)
    raise ConvergenceError(
        f"terminal mass {v[terminal].sum():.6g} after {max_iters} iterations "
        f"(epsilon={epsilon})"
    )


@dataclass(eq=False)
class CountDistribution:
    """Truncated pmf over nonnegative integer operation counts.

    ``pmf[k]`` is the probability of exactly ``k`` operations.
    ``truncated_mass`` is tail mass dropped beyond the stored support;
    ``overflow_mass`` is mass at or beyond an explicit cap when capped
    arithmetic is used. The three parts always sum to 1.
    """

    pmf: np.ndarray
    truncated_mass: float = 0.0
    overflow_mass: float = 0.0

    def __post_init__(self) -> None:
        self.pmf = np.asarray(self.pmf, dtype=float)

    @classmethod
    def point_mass(cls, k: int) -> "CountDistribution":
        pmf = np.zeros(k + 1)
        pmf[k] = 1.0
        return cls(pmf)

    @classmethod
    def from_counts(cls, counts: np.ndarray) -> "CountDistribution":
        """Empirical distribution of observed nonnegative integer counts."""
        counts = np.asarray(counts)
        return cls(np.bincount(counts) / counts.size)

    @property
    def support(self) -> int:
        return self.pmf.size

    def total_mass(self) -> float:
        return float(self.pmf.sum() + self.truncated_mass + self.overflow_mass)

    def mean(self) -> float:
        return float(np.arange(self.pmf.size) @ self.pmf)

    def prob_greater(self, k: int) -> float:
        """P(count > k); truncated and overflow mass both lie above any
        stored index, so they always count toward the tail."""
        tail = self.pmf[k + 1 :].sum() if k + 1 < self.pmf.size else 0.0
        return float(tail + self.truncated_mass + self.overflow_mass)

    def to_document(self) -> dict:
        return {
            "pmf": [float(x) for x in self.pmf],
            "truncated_mass": float(self.truncated_mass),
            "overflow_mass": float(self.overflow_mass),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "CountDistribution":
        return cls(
            np.array(doc["pmf"], dtype=float),
            float(doc.get("truncated_mass", 0.0)),
            float(doc.get("overflow_mass", 0.0)),
        )

    def csv_rows(self) -> list[tuple[int, float]]:
        return [(k, float(p)) for k, p in enumerate(self.pmf)]


def trim_tail(pmf: np.ndarray, eps: float = TRUNCATION_EPS) -> tuple[np.ndarray, float]:
    """Drop trailing entries below eps; return (trimmed pmf, dropped mass)."""
    pmf = np.asarray(pmf, dtype=float)
    keep = pmf.size
    while keep > 1 and pmf[keep - 1] < eps:
        keep -= 1
    return pmf[:keep].copy(), float(pmf[keep:].sum())


def total_variation(a: CountDistribution, b: CountDistribution) -> float:
    """TV distance on the stored supports; residual (truncated + overflow)
    masses are compared as one extra bucket each."""
    size = max(a.pmf.size, b.pmf.size)
    pa = np.zeros(size)
    pb = np.zeros(size)
    pa[: a.pmf.size] = a.pmf
    pb[: b.pmf.size] = b.pmf
    resid_a = a.truncated_mass + a.overflow_mass
    resid_b = b.truncated_mass + b.overflow_mass
    return 0.5 * (np.abs(pa - pb).sum() + abs(resid_a - resid_b))


def visit_count_distribution(
    occupancy: StateOccupancy, group: set[int] | frozenset[int]
) -> CountDistribution:
    """Distribution of total visits to ``group`` over one absorption run.

    Tracks the joint law of (visits so far, current state) across the
    converged iterations: the visit count steps by one exactly when the
    chain lands in a group state. Trajectories still unabsorbed at the stop
    iteration (mass <= epsilon) keep their counts as of that iteration.
    """
    chain = occupancy.chain
    group = frozenset(int(g) for g in group)
    if not group:
        raise ValueError("state group is empty")
    for g in sorted(group):
        if not 0 <= g < chain.n_states:
            raise ValueError(f"unknown state id {g}")
        if g in chain.terminal_states:
            raise ValueError(f"state {g} is terminal; visit counts never converge")

    steps = occupancy.converged_at
    n = chain.n_states
    in_group = np.zeros(n, dtype=bool)
    in_group[sorted(group)] = True

    joint = np.zeros((steps + 2, n))
    start_count = 1 if chain.initial_state in group else 0
    joint[start_count, chain.initial_state] = 1.0
    matrix = chain.transition
    for _ in range(steps):
        stepped = joint @ matrix
        nxt = np.empty_like(stepped)
        nxt[:, ~in_group] = stepped[:, ~in_group]
        nxt[0, in_group] = 0.0
        nxt[1:, in_group] = stepped[:-1, in_group]
        joint = nxt

    pmf, dropped = trim_tail(joint.sum(axis=1))
    return CountDistribution(pmf, truncated_mass=dropped)


@dataclass(eq=False)
class PerChallengeOps:
    """Per-challenge set and reset operation-count distributions."""

    set_dist: CountDistribution
    reset_dist: CountDistribution

    @property
    def mean_set(self) -> float:
        return self.set_dist.mean()

    @property
    def mean_reset(self) -> float:
        return self.reset_dist.mean()


def per_challenge_ops(
    chain: MarkovChainSpec,
    epsilon: float = DEFAULT_EPSILON,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> PerChallengeOps:
    """Evolve the chain once and extract set/reset visit-count distributions.

    A missing group (e.g. a chain with no reset states) yields a point mass
    at zero; a chain with neither set nor reset states is an error.
    """
    set_group = chain.set_states
    reset_group = chain.reset_states
    if not set_group and not reset_group:
        raise ValueError("chain has no set- or reset-tagged states")
    occupancy = evolve(chain, epsilon=epsilon, max_iters=max_iters)
    set_dist = (
        visit_count_distribution(occupancy, set_group)
        if set_group
        else CountDistribution.point_mass(0)
    )
    reset_dist = (
        visit_count_distribution(occupancy, reset_group)
        if reset_group
        else CountDistribution.point_mass(0)
    )
    return PerChallengeOps(set_dist, reset_dist)


def sample_trajectories(
    chain: MarkovChainSpec, n: int, seed: int
) -> PerChallengeOps:
    """Monte Carlo oracle: simulate ``n`` absorption runs and count visits.

    Deterministic for a given seed; trajectories are stepped in lockstep
    with a single RNG stream, so results do not depend on scheduling.
    """
    if n < 1:
        raise ValueError("need at least one trajectory")
    rng = np.random.default_rng(seed)
    cumulative = np.cumsum(chain.transition, axis=1)
    set_tag = np.zeros(chain.n_states, dtype=np.int64)
    reset_tag = np.zeros(chain.n_states, dtype=np.int64)
    set_tag[sorted(chain.set_states)] = 1
    reset_tag[sorted(chain.reset_states)] = 1
    terminal = np.zeros(chain.n_states, dtype=bool)
    terminal[sorted(chain.terminal_states)] = True

    states = np.full(n, chain.initial_state, dtype=np.int64)
    set_counts = np.zeros(n, dtype=np.int64)
    reset_counts = np.zeros(n, dtype=np.int64)
    set_counts += set_tag[states]
    reset_counts += reset_tag[states]

    alive = ~terminal[states]
    while alive.any():
        draws = rng.random(int(alive.sum()))
        current = states[alive]
        nxt = np.empty_like(current)
        for s in np.unique(current):
            mask = current == s
            nxt[mask] = np.searchsorted(cumulative[s], draws[mask], side="right")
        states[alive] = nxt
        set_counts[alive] += set_tag[nxt]
        reset_counts[alive] += reset_tag[nxt]
        alive = ~terminal[states]

    return PerChallengeOps(
        CountDistribution.from_counts(set_counts),
        CountDistribution.from_counts(reset_counts),
    )
