"""Lifetime prediction from per-challenge wear distributions.

The pipeline: per-challenge operation counts are summed over N independent
challenges (binary-doubling convolution with an overflow cap, which is
exact for the tail query that matters), a cell is dead when its total
strictly exceeds the endurance limit, and the device is dead when strictly
more than ``dead_fraction`` of its cells are dead (binomial tail over
independent cells). The half-life is the challenge count at which the
device-death probability reaches 50%.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .chains import MarkovChainSpec
from .occupancy import CountDistribution, PerChallengeOps, per_challenge_ops

DEFAULT_ENDURANCE_LIMIT = 1000
DEFAULT_CELL_COUNT = 256
DEFAULT_DEAD_FRACTION = 0.15
DEFAULT_GRID_STOP = 10_000_000
DEFAULT_GRID_FACTOR = 1.2
#: Bisection refinement around the 50% crossing stops once the bracketing
#: grid points are within this ratio of each other.
REFINE_RATIO = 1.001


class Mode(str, Enum):
    """Which wear operations count toward the endurance limit."""

    SET = "set"
    RESET = "reset"
    COMBINED = "combined"


class HalfLifeNotReached(ValueError):
    """The lifetime curve never reaches 50% on its grid."""


@dataclass(frozen=True)
class LifetimeParams:
    """Death model parameters.

    ``either_exceeds`` only affects combined mode: by default the combined
    wear is the sum of set and reset counts (treated as independent within
    a challenge); with the flag, a cell dies when either total alone
    exceeds the limit. The two readings are both defensible; the sum is
    the primary one.
    """

    endurance_limit: int = DEFAULT_ENDURANCE_LIMIT
    cell_count: int = DEFAULT_CELL_COUNT
    dead_fraction: float = DEFAULT_DEAD_FRACTION
    mode: Mode = Mode.SET
    either_exceeds: bool = False

    def __post_init__(self) -> None:
        if self.endurance_limit < 1:
            raise ValueError(f"endurance_limit must be >= 1, got {self.endurance_limit}")
        if self.cell_count < 1:
            raise ValueError(f"cell_count must be >= 1, got {self.cell_count}")
        if not 0.0 < self.dead_fraction < 1.0:
            raise ValueError(f"dead_fraction must be in (0, 1), got {self.dead_fraction}")


@dataclass(eq=False)
class LifetimeCurve:
    """P(device dead) as a function of challenge count."""

    challenge_grid: np.ndarray
    p_dead: np.ndarray
    params: LifetimeParams

    def __post_init__(self) -> None:
        self.challenge_grid = np.asarray(self.challenge_grid, dtype=np.int64)
        self.p_dead = np.asarray(self.p_dead, dtype=float)

    def csv_rows(self) -> list[tuple[int, float]]:
        return [(int(n), float(p)) for n, p in zip(self.challenge_grid, self.p_dead)]

    def to_document(self) -> dict:
        return {
            "challenges": [int(n) for n in self.challenge_grid],
            "p_dead": [float(p) for p in self.p_dead],
            "mode": self.params.mode.value,
            "endurance_limit": self.params.endurance_limit,
            "cell_count": self.params.cell_count,
            "dead_fraction": self.params.dead_fraction,
            "either_exceeds": self.params.either_exceeds,
        }


def convolve_capped(
    a: CountDistribution, b: CountDistribution, cap: int
) -> CountDistribution:
    """Distribution of the sum of two independent counts, with all mass at
    counts above ``cap`` collapsed into one overflow bucket.

    Truncated tail mass on the inputs lies beyond their stored supports and
    is folded into overflow, which is exact for any later tail query at or
    below the cap when the stored supports already reach the cap, and an
    upper-bucket approximation (bounded by the truncation epsilon) below
    that.
    """
    over_a = a.overflow_mass + a.truncated_mass
    over_b = b.overflow_mass + b.truncated_mass
    full = np.convolve(a.pmf, b.pmf)
    head = full[: cap + 1]
    spill = float(full[cap + 1 :].sum())
    overflow = over_a + over_b - over_a * over_b + spill
    return CountDistribution(head.copy(), overflow_mass=overflow)


def _capped(dist: CountDistribution, cap: int) -> CountDistribution:
    if dist.pmf.size <= cap + 1:
        return CountDistribution(
            dist.pmf.copy(),
            overflow_mass=dist.overflow_mass + dist.truncated_mass,
        )
    return CountDistribution(
        dist.pmf[: cap + 1].copy(),
        overflow_mass=dist.overflow_mass
        + dist.truncated_mass
        + float(dist.pmf[cap + 1 :].sum()),
    )


class NFoldAccumulator:
    """Binary-doubling n-fold sums of one per-challenge distribution.

    Caches the 2^k-fold distributions so a whole challenge grid costs
    O(log n_max) convolutions per point.
    """

    def __init__(self, per_challenge: CountDistribution, cap: int):
        if cap < 0:
            raise ValueError("cap must be nonnegative")
        self.cap = cap
        self._powers = [_capped(per_challenge, cap)]

    def _power(self, k: int) -> CountDistribution:
        while len(self._powers) <= k:
            last = self._powers[-1]
            self._powers.append(convolve_capped(last, last, self.cap))
        return self._powers[k]

    def n_fold(self, n: int) -> CountDistribution:
        if n < 1:
            raise ValueError("n must be >= 1")
        result: CountDistribution | None = None
        bit = 0
        while n:
            if n & 1:
                part = self._power(bit)
                result = part if result is None else convolve_capped(result, part, self.cap)
            n >>= 1
            bit += 1
        assert result is not None
        return result


def total_ops_after_n(
    per_challenge: CountDistribution, n: int, cap: int
) -> CountDistribution:
    """Distribution of total operations over ``n`` independent challenges.

    Computed by binary-doubling convolution with all mass above ``cap``
    fused into the overflow bucket, so the cost is O(log n) convolutions of
    length ``cap`` regardless of ``n``.
    """
    return NFoldAccumulator(per_challenge, cap).n_fold(n)


def cell_dead_prob(total: CountDistribution, limit: int) -> float:
    """P(total operations strictly exceed the endurance limit)."""
    return min(1.0, total.prob_greater(limit))


def _dead_cell_threshold(params: LifetimeParams) -> int:
    # Smallest dead-cell count that kills the device: strictly more than
    # dead_fraction * M. The nudge undoes downward float error when the
    # product is an exact integer.
    return int(math.floor(params.dead_fraction * params.cell_count + 1e-9)) + 1


def puf_dead_prob(p_cell: float, params: LifetimeParams) -> float:
    """P(device dead) given the per-cell death probability.

    Cells fail independently, so the dead-cell count is binomial; the tail
    is summed in log space (lgamma-based terms) for numerical stability.
    """
    if not 0.0 <= p_cell <= 1.0:
        raise ValueError(f"p_cell must be a probability, got {p_cell}")
    m = params.cell_count
    k_min = _dead_cell_threshold(params)
    if k_min > m:
        return 0.0
    if p_cell == 0.0:
        return 0.0
    if p_cell == 1.0:
        return 1.0
    log_p = math.log(p_cell)
    log_q = math.log1p(-p_cell)
    log_comb_m = math.lgamma(m + 1)
    total = 0.0
    for k in range(k_min, m + 1):
        log_term = (
            log_comb_m
            - math.lgamma(k + 1)
            - math.lgamma(m - k + 1)
            + k * log_p
            + (m - k) * log_q
        )
        total += math.exp(log_term)
    return min(1.0, total)


def default_challenge_grid(
    start: int = 1,
    stop: int = DEFAULT_GRID_STOP,
    factor: float = DEFAULT_GRID_FACTOR,
) -> np.ndarray:
    """Geometrically spaced integer challenge counts from start to stop."""
    if start < 1 or stop < start:
        raise ValueError("need 1 <= start <= stop")
    if factor <= 1.0:
        raise ValueError("factor must exceed 1")
    points = [start]
    x = float(start)
    while points[-1] < stop:
        x *= factor
        points.append(min(int(round(x)), stop))
    return np.unique(np.array(points, dtype=np.int64))


def _combined_per_challenge(ops: PerChallengeOps, cap: int) -> CountDistribution:
    # Sum of per-challenge set and reset counts, treated as independent.
    return convolve_capped(ops.set_dist, ops.reset_dist, cap)


def lifetime_curve(
    chain: MarkovChainSpec,
    params: LifetimeParams | None = None,
    grid: np.ndarray | None = None,
    *,
    epsilon: float = 1e-5,
    refine: bool = True,
) -> LifetimeCurve:
    """Device-death probability over a challenge grid for one chain.

    The grid must be strictly increasing. With ``refine=True`` extra points
    are inserted by geometric bisection around the first 50% crossing until
    the bracketing points are within ``REFINE_RATIO``.
    """
    params = params or LifetimeParams()
    if grid is None:
        grid = default_challenge_grid()
    grid = np.asarray(grid, dtype=np.int64)
    if grid.size == 0 or np.any(np.diff(grid) <= 0) or grid[0] < 1:
        raise ValueError("challenge grid must be strictly increasing and >= 1")

    ops = per_challenge_ops(chain, epsilon=epsilon)
    cap = params.endurance_limit

    if params.mode is Mode.COMBINED and params.either_exceeds:
        accumulators = [
            NFoldAccumulator(ops.set_dist, cap),
            NFoldAccumulator(ops.reset_dist, cap),
        ]

        def p_at(n: int) -> float:
            survive = 1.0
            for acc in accumulators:
                survive *= 1.0 - cell_dead_prob(acc.n_fold(n), cap)
            return puf_dead_prob(1.0 - survive, params)

    else:
        if params.mode is Mode.SET:
            per = ops.set_dist
        elif params.mode is Mode.RESET:
            per = ops.reset_dist
        else:
            per = _combined_per_challenge(ops, cap)
        accumulator = NFoldAccumulator(per, cap)

        def p_at(n: int) -> float:
            return puf_dead_prob(cell_dead_prob(accumulator.n_fold(n), cap), params)

    points = {int(n): p_at(int(n)) for n in grid}

    if refine:
        ns = sorted(points)
        probs = [points[n] for n in ns]
        idx = next((i for i, p in enumerate(probs) if p >= 0.5), None)
        if idx is not None and idx > 0:
            lo, hi = ns[idx - 1], ns[idx]
            while hi > lo + 1 and hi / lo > REFINE_RATIO:
                mid = int(round(math.sqrt(lo * hi)))
                if mid in (lo, hi):
                    break
                p_mid = p_at(mid)
                points[mid] = p_mid
                if p_mid >= 0.5:
                    hi = mid
                else:
                    lo = mid

    ns = np.array(sorted(points), dtype=np.int64)
    return LifetimeCurve(ns, np.array([points[int(n)] for n in ns]), params)


def half_life(curve: LifetimeCurve) -> float:
    """Smallest challenge count where P(device dead) reaches 0.5, found by
    log-linear interpolation between the bracketing grid points."""
    probs = curve.p_dead
    grid = curve.challenge_grid
    above = np.flatnonzero(probs >= 0.5)
    if above.size == 0:
        raise HalfLifeNotReached(
            f"curve peaks at {probs.max():.4g}; extend the challenge grid"
        )
    idx = int(above[0])
    if idx == 0:
        return float(grid[0])
    n0, n1 = grid[idx - 1], grid[idx]
    p0, p1 = probs[idx - 1], probs[idx]
    if p1 == p0:
        return float(n1)
    frac = (0.5 - p0) / (p1 - p0)
    return float(math.exp(math.log(n0) + frac * (math.log(n1) - math.log(n0))))
