import math
from fractions import Fraction

import numpy as np
import pytest

from nvmpuf.chains import ChainParams, build_ampuf_chain, build_reap_nvm_chain
from nvmpuf.lifetime import (
    HalfLifeNotReached,
    LifetimeCurve,
    LifetimeParams,
    Mode,
    cell_dead_prob,
    convolve_capped,
    default_challenge_grid,
    half_life,
    lifetime_curve,
    puf_dead_prob,
    total_ops_after_n,
)
from nvmpuf.occupancy import CountDistribution


def bernoulli(p=0.5):
    return CountDistribution(np.array([1.0 - p, p]))


def exact_binomial_pmf(n, p=Fraction(1, 2)):
    return [float(math.comb(n, k) * p**k * (1 - p) ** (n - k)) for k in range(n + 1)]


class TestTotalOps:
    def test_point_mass_scales(self):
        dist = total_ops_after_n(CountDistribution.point_mass(1), 5, cap=10)
        assert dist.pmf[5] == 1.0
        assert dist.overflow_mass == 0.0

    @pytest.mark.parametrize("n", [1, 10, 100, 1000])
    def test_bernoulli_sum_is_binomial(self, n):
        dist = total_ops_after_n(bernoulli(), n, cap=n)
        exact = exact_binomial_pmf(n)
        assert np.abs(dist.pmf - exact).max() < 1e-10

    def test_doubling_equals_naive_convolution(self):
        rng = np.random.default_rng(0)
        pmf = rng.dirichlet(np.ones(16))
        per = CountDistribution(pmf)
        for n in range(1, 9):
            doubled = total_ops_after_n(per, n, cap=(16 - 1) * n)
            naive = per.pmf
            for _ in range(n - 1):
                naive = np.convolve(naive, per.pmf)
            assert np.abs(doubled.pmf - naive).max() < 1e-12

    def test_overflow_collects_capped_mass(self):
        dist = total_ops_after_n(bernoulli(), 10, cap=4)
        assert dist.pmf.size == 5
        exact = exact_binomial_pmf(10)
        assert dist.overflow_mass == pytest.approx(sum(exact[5:]), abs=1e-12)
        assert dist.total_mass() == pytest.approx(1.0, abs=1e-12)

    def test_cost_independent_of_n(self):
        per = CountDistribution(np.array([0.9, 0.1]))
        big = total_ops_after_n(per, 10**7, cap=100)
        assert big.pmf.size == 101
        assert big.total_mass() == pytest.approx(1.0, abs=1e-9)


class TestConvolveCapped:
    def test_residual_masses_fold_into_overflow(self):
        a = CountDistribution(np.array([0.8, 0.1]), truncated_mass=0.1)
        b = CountDistribution(np.array([0.9, 0.1]))
        out = convolve_capped(a, b, cap=2)
        assert out.total_mass() == pytest.approx(1.0, abs=1e-12)
        assert out.overflow_mass >= 0.1


class TestCellDeath:
    def test_boundary_is_strictly_greater(self):
        at_limit = CountDistribution.point_mass(1000)
        assert cell_dead_prob(at_limit, 1000) == 0.0

    def test_one_past_limit_dies(self):
        past = total_ops_after_n(CountDistribution.point_mass(1001), 1, cap=1000)
        assert cell_dead_prob(past, 1000) == 1.0

    def test_binomial_tail_value(self):
        # P(X > 1000) for X ~ Binomial(2000, 1/2); exact rational sum gives
        # 0.49108049442707286
        total = total_ops_after_n(bernoulli(), 2000, cap=1000)
        assert cell_dead_prob(total, 1000) == pytest.approx(
            0.49108049442707286, abs=1e-12
        )

    def test_monotone_in_n_and_limit(self):
        per = bernoulli(0.3)
        probs = [
            cell_dead_prob(total_ops_after_n(per, n, cap=50), 50)
            for n in (50, 100, 200, 400)
        ]
        assert all(b >= a for a, b in zip(probs, probs[1:]))
        total = total_ops_after_n(per, 300, cap=120)
        by_limit = [cell_dead_prob(total, limit) for limit in (60, 80, 100, 120)]
        assert all(b <= a for a, b in zip(by_limit, by_limit[1:]))


class TestPufDeath:
    def test_certainties(self):
        params = LifetimeParams()
        assert puf_dead_prob(0.0, params) == 0.0
        assert puf_dead_prob(1.0, params) == 1.0

    def test_matches_exact_reference_at_default_size(self):
        # mpmath (50 digits), M=256, threshold k > floor(0.15*256) = 38
        params = LifetimeParams()
        expected = {
            0.10: 0.005436712731144266,
            0.15: 0.4848531527796599,
            0.20: 0.979197121519289,
        }
        for p_cell, reference in expected.items():
            assert puf_dead_prob(p_cell, params) == pytest.approx(reference, abs=1e-9)

    @pytest.mark.parametrize("m", [5, 12, 20, 30])
    def test_matches_brute_force_small_m(self, m):
        params = LifetimeParams(cell_count=m, dead_fraction=0.15)
        threshold = math.floor(0.15 * m + 1e-9)
        for p_cell in (0.01, 0.2, 0.5, 0.9):
            p = Fraction(p_cell).limit_denominator(10**6)
            exact = sum(
                Fraction(math.comb(m, k)) * p**k * (1 - p) ** (m - k)
                for k in range(threshold + 1, m + 1)
            )
            ours = puf_dead_prob(float(p), params)
            assert ours == pytest.approx(float(exact), abs=1e-12)

    def test_integer_threshold_uses_strict_inequality(self):
        # 0.15 * 20 = 3 exactly: device dies at k >= 4 dead cells
        params = LifetimeParams(cell_count=20, dead_fraction=0.15)
        exact = sum(
            Fraction(math.comb(20, k)) * Fraction(1, 2) ** 20 for k in range(4, 21)
        )
        assert puf_dead_prob(0.5, params) == pytest.approx(float(exact), abs=1e-12)


class TestLifetimeCurve:
    def test_grid_must_increase(self):
        chain = build_reap_nvm_chain()
        with pytest.raises(ValueError):
            lifetime_curve(chain, LifetimeParams(), np.array([10, 10, 20]))

    def test_curve_monotone_for_all_builtins_and_modes(self):
        grid = default_challenge_grid(stop=200_000)
        for chain in (build_reap_nvm_chain(), build_ampuf_chain()):
            for mode in Mode:
                curve = lifetime_curve(
                    chain, LifetimeParams(mode=mode), grid, refine=False
                )
                assert np.all(np.diff(curve.p_dead) >= 0)

    def test_curve_saturates_at_one(self):
        curve = lifetime_curve(
            build_ampuf_chain(), LifetimeParams(), default_challenge_grid(stop=10_000)
        )
        assert curve.p_dead[-1] > 0.999999

    def test_either_exceeds_at_least_sum_free(self):
        # dying on either total is never more likely than dying on the sum
        grid = default_challenge_grid(stop=5000)
        chain = build_ampuf_chain()
        combined = lifetime_curve(
            chain, LifetimeParams(mode=Mode.COMBINED), grid, refine=False
        )
        either = lifetime_curve(
            chain,
            LifetimeParams(mode=Mode.COMBINED, either_exceeds=True),
            grid,
            refine=False,
        )
        assert np.all(either.p_dead <= combined.p_dead + 1e-12)

    @pytest.mark.parametrize(
        "builder", [build_reap_nvm_chain, build_ampuf_chain]
    )
    def test_set_mode_kills_before_reset_mode(self, builder):
        grid = default_challenge_grid(stop=3_000_000)
        chain = builder()
        hl_set = half_life(lifetime_curve(chain, LifetimeParams(mode=Mode.SET), grid))
        hl_reset = half_life(
            lifetime_curve(chain, LifetimeParams(mode=Mode.RESET), grid)
        )
        assert hl_set < hl_reset

    def test_n_fold_matches_direct_wear_monte_carlo(self):
        # 10^5 simulated cells each see 10^4 challenges; their accumulated
        # set counts are compared with the convolved analytic distribution
        from nvmpuf.occupancy import per_challenge_ops, total_variation

        per = per_challenge_ops(build_reap_nvm_chain()).set_dist
        n_challenges, n_cells = 10_000, 100_000
        rng = np.random.default_rng(123)
        p_write = 1.0 - per.pmf[0]
        writes = rng.binomial(n_challenges, p_write, size=n_cells)
        conditional = per.pmf[1:] / p_write
        pulses = rng.choice(
            np.arange(1, per.pmf.size), size=int(writes.sum()), p=conditional
        )
        boundaries = np.concatenate([[0], np.cumsum(writes)])
        totals = np.add.reduceat(
            np.concatenate([pulses, [0]]), boundaries[:-1]
        )
        totals[writes == 0] = 0
        empirical = CountDistribution(np.bincount(totals) / n_cells)
        analytic = total_ops_after_n(per, n_challenges, cap=int(totals.max()) + 10)
        assert total_variation(empirical, analytic) < 0.02


class TestHalfLife:
    def test_simple_crossing(self):
        curve = LifetimeCurve(np.array([1, 2, 3]), np.array([0.0, 0.5, 1.0]),
                              LifetimeParams())
        assert half_life(curve) == 2.0

    def test_interpolates_in_log_space(self):
        curve = LifetimeCurve(np.array([10, 1000]), np.array([0.25, 0.75]),
                              LifetimeParams())
        assert half_life(curve) == pytest.approx(100.0)

    def test_grid_too_short(self):
        curve = LifetimeCurve(np.array([1, 2]), np.array([0.0, 0.1]),
                              LifetimeParams())
        with pytest.raises(HalfLifeNotReached):
            half_life(curve)

    def test_reap_beats_ampuf_at_every_probability_level(self):
        params = LifetimeParams()
        reap = lifetime_curve(build_reap_nvm_chain(), params)
        amp = lifetime_curve(build_ampuf_chain(), params)
        for q in (0.05, 0.25, 0.5, 0.75, 0.95):
            n_reap = reap.challenge_grid[np.argmax(reap.p_dead >= q)]
            n_amp = amp.challenge_grid[np.argmax(amp.p_dead >= q)]
            assert n_reap > n_amp


def test_default_grid_shape():
    grid = default_challenge_grid()
    assert grid[0] == 1 and grid[-1] == 10_000_000
    assert np.all(np.diff(grid) > 0)


def test_lifetime_params_validation():
    with pytest.raises(ValueError):
        LifetimeParams(dead_fraction=0.0)
    with pytest.raises(ValueError):
        LifetimeParams(endurance_limit=0)
    with pytest.raises(ValueError):
        LifetimeParams(cell_count=0)
