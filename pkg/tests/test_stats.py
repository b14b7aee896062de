import itertools
import math

import numpy as np
import pytest

from regeval import errors, stats
from regeval.stats import (
    dsc30,
    mann_whitney_u,
    mean_std,
    pearson_fit,
    percentile,
    tre30,
    wilcoxon_signed_rank,
)


# --- enumeration oracles -----------------------------------------------------


def wilcoxon_enum_p(d, alternative):
    """Exhaustive sign-pattern enumeration on the observed |d| ranks."""
    d = np.asarray(d, dtype=np.float64)
    nz = d[d != 0.0]
    n = nz.size
    # average ranks of |d|, computed independently (argsort of argsort + tie groups)
    abs_d = np.abs(nz)
    ranks = np.empty(n)
    for i, v in enumerate(abs_d):
        smaller = np.sum(abs_d < v)
        equal = np.sum(abs_d == v)
        ranks[i] = smaller + (equal + 1) / 2.0
    w_obs = ranks[nz > 0].sum()
    count = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(r for r, s in zip(ranks, signs) if s)
        if alternative == "greater":
            count += w >= w_obs - 1e-12
        else:
            count += w <= w_obs + 1e-12
    return count / 2.0**n


def mwu_enum_p(x, y, alternative):
    """Exhaustive enumeration over all C(n+m, n) rank arrangements."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, m = x.size, y.size
    pooled = np.concatenate([x, y])
    order = np.argsort(pooled)
    ranks = np.empty(n + m)
    ranks[order] = np.arange(1, n + m + 1)
    u_obs = ranks[:n].sum() - n * (n + 1) / 2.0
    total = 0
    count = 0
    all_ranks = np.arange(1, n + m + 1)
    for combo in itertools.combinations(range(n + m), n):
        u = all_ranks[list(combo)].sum() - n * (n + 1) / 2.0
        total += 1
        if alternative == "greater":
            count += u >= u_obs - 1e-12
        else:
            count += u <= u_obs + 1e-12
    return count / total


# --- percentile --------------------------------------------------------------


class TestPercentile:
    def test_median(self):
        assert percentile([1, 2, 3, 4, 5], 50) == 3.0

    def test_interpolation_rule(self):
        assert percentile([0, 10], 95) == 9.5

    def test_matches_sort_and_index_oracle(self, rng):
        for _ in range(20):
            values = rng.standard_normal(1000)
            q = float(rng.uniform(0, 100))
            got = percentile(values, q)
            v = np.sort(values)
            h = (len(v) - 1) * q / 100.0
            lo = int(math.floor(h))
            want = v[lo] if lo == len(v) - 1 else v[lo] + (h - lo) * (v[lo + 1] - v[lo])
            assert got == pytest.approx(want, abs=1e-12)

    def test_monotone_and_bounded(self, rng):
        values = rng.standard_normal(50)
        qs = np.linspace(0, 100, 21)
        results = [percentile(values, q) for q in qs]
        assert all(a <= b + 1e-15 for a, b in zip(results, results[1:]))
        assert results[0] == values.min() and results[-1] == values.max()

    def test_errors(self):
        with pytest.raises(errors.EmptyInput):
            percentile([], 50)
        with pytest.raises(errors.BadQuantile):
            percentile([1.0], 101)


class TestRobustnessStats:
    def test_constant_dsc(self):
        assert dsc30([0.8] * 7) == 0.8

    def test_tre30_is_seventieth_percentile(self):
        assert tre30(list(range(1, 11))) == pytest.approx(7.3)

    def test_matches_percentile(self, rng):
        values = rng.random(37)
        assert dsc30(values) == percentile(values, 30)
        assert tre30(values) == percentile(values, 70)

    def test_mean_std(self):
        mean, std = mean_std([1.0, 2.0, 3.0])
        assert mean == 2.0
        assert std == pytest.approx(1.0)
        assert mean_std([5.0]) == (5.0, 0.0)

    def test_summarize_cohort(self):
        cohort = stats.summarize_cohort({"dsc": [0.8, 0.9], "tre": [1.0, 2.0, 3.0]})
        assert cohort.means["dsc"] == pytest.approx(0.85)
        assert cohort.counts == {"dsc": 2, "tre": 3}
        assert all(s >= 0 for s in cohort.stds.values())


# --- Wilcoxon ----------------------------------------------------------------


class TestWilcoxon:
    def test_all_positive_units(self):
        x = np.arange(10, dtype=float) + 1.0
        y = x - 1.0
        res = wilcoxon_signed_rank(x, y, "greater")
        assert res.statistic == 55.0
        assert res.p_one_sided == pytest.approx(1.0 / 1024.0, abs=1e-15)
        assert res.method == "exact"

    def test_identical_samples_flagged(self):
        x = [1.0, 2.0, 3.0]
        res = wilcoxon_signed_rank(x, x, "greater")
        assert res.p_one_sided == 1.0
        assert res.n_effective == 0
        assert res.method == "degenerate"

    def test_fixed_example_matches_enumeration(self):
        d = np.array([3.0, -1.0, 2.0, -2.0, 4.0, 1.0])
        x = d
        y = np.zeros(6)
        for alt in ("greater", "less"):
            got = wilcoxon_signed_rank(x, y, alt).p_one_sided
            want = wilcoxon_enum_p(d, alt)
            assert got == pytest.approx(want, abs=1e-12)

    def test_random_instances_match_enumeration(self, rng):
        for _ in range(60):
            n = int(rng.integers(1, 11))
            x = rng.standard_normal(n)
            y = rng.standard_normal(n)
            alt = "greater" if rng.random() < 0.5 else "less"
            got = wilcoxon_signed_rank(x, y, alt).p_one_sided
            want = wilcoxon_enum_p(x - y, alt)
            assert got == pytest.approx(want, abs=1e-12)

    def test_ties_in_magnitudes_still_exact(self, rng):
        # repeated |d| values: the exact branch conditions on average ranks
        x = np.array([2.0, 2.0, 2.0, -2.0, 1.0, 1.0])
        y = np.zeros(6)
        got = wilcoxon_signed_rank(x, y, "greater").p_one_sided
        want = wilcoxon_enum_p(x, "greater")
        assert got == pytest.approx(want, abs=1e-12)

    def test_direction_swap_identity(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 30))
            x = rng.standard_normal(n)
            y = rng.standard_normal(n)
            assert (
                wilcoxon_signed_rank(x, y, "greater").p_one_sided
                == wilcoxon_signed_rank(y, x, "less").p_one_sided
            )

    def test_exact_and_normal_agree_for_moderate_n(self, rng):
        # tie-free samples in the window where both branches are defensible
        for _ in range(25):
            n = int(rng.integers(20, 26))
            x = rng.standard_normal(n)
            y = rng.standard_normal(n)
            p_exact = wilcoxon_signed_rank(x, y, "greater", method="exact").p_one_sided
            p_normal = wilcoxon_signed_rank(x, y, "greater", method="normal").p_one_sided
            assert abs(p_exact - p_normal) < 0.01

    def test_length_mismatch(self):
        with pytest.raises(errors.LengthMismatch):
            wilcoxon_signed_rank([1.0], [1.0, 2.0])


# --- Mann-Whitney ------------------------------------------------------------


class TestMannWhitney:
    def test_complete_separation(self):
        res = mann_whitney_u([10.0, 11.0, 12.0], [1.0, 2.0, 3.0], "greater")
        assert res.statistic == 9.0
        assert res.p_one_sided == pytest.approx(1.0 / 20.0, abs=1e-15)
        assert res.method == "exact"

    def test_equal_multisets_not_significant(self):
        x = [1.0, 2.0, 3.0, 4.0]
        for alt in ("greater", "less"):
            assert mann_whitney_u(x, list(x), alt).p_one_sided >= 0.5

    def test_random_instances_match_enumeration(self, rng):
        for _ in range(40):
            n = int(rng.integers(1, 8))
            m = int(rng.integers(1, 8))
            x = rng.standard_normal(n)
            y = rng.standard_normal(m)
            alt = "greater" if rng.random() < 0.5 else "less"
            got = mann_whitney_u(x, y, alt).p_one_sided
            want = mwu_enum_p(x, y, alt)
            assert got == pytest.approx(want, abs=1e-12)

    def test_direction_swap_identity(self, rng):
        for _ in range(20):
            n, m = int(rng.integers(2, 20)), int(rng.integers(2, 20))
            x = rng.standard_normal(n)
            y = rng.standard_normal(m)
            assert (
                mann_whitney_u(x, y, "greater").p_one_sided
                == mann_whitney_u(y, x, "less").p_one_sided
            )

    def test_exact_and_normal_agree_for_moderate_sizes(self, rng):
        for _ in range(25):
            n = int(rng.integers(8, 11))
            m = int(rng.integers(12, 26))
            x = rng.standard_normal(n)
            y = rng.standard_normal(m)
            p_exact = mann_whitney_u(x, y, "greater", method="exact").p_one_sided
            p_normal = mann_whitney_u(x, y, "greater", method="normal").p_one_sided
            assert abs(p_exact - p_normal) < 0.01

    def test_empty_input(self):
        with pytest.raises(errors.EmptyInput):
            mann_whitney_u([], [1.0])


# --- Pearson -----------------------------------------------------------------


class TestPearsonFit:
    def test_exact_line(self):
        x = np.array([0.0, 1.0, 2.0, 3.0])
        fit = pearson_fit(x, -2.0 * x + 1.0)
        assert fit.r == pytest.approx(-1.0, abs=1e-12)
        assert fit.slope == pytest.approx(-2.0, abs=1e-12)
        assert fit.intercept == pytest.approx(1.0, abs=1e-12)

    def test_constant_y_degenerate(self):
        with pytest.raises(errors.DegenerateInput):
            pearson_fit([1.0, 2.0, 3.0], [5.0, 5.0, 5.0])

    def test_constant_x_degenerate(self):
        with pytest.raises(errors.DegenerateInput):
            pearson_fit([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])

    def test_affine_invariance_of_r(self, rng):
        x = rng.standard_normal(40)
        y = rng.standard_normal(40)
        base = pearson_fit(x, y)
        scaled = pearson_fit(3.0 * x + 5.0, 0.5 * y - 2.0)
        assert scaled.r == pytest.approx(base.r, abs=1e-12)
        # slope transforms as slope' = slope * sy / sx under y' = sy*y, x' = sx*x
        assert scaled.slope == pytest.approx(base.slope * 0.5 / 3.0, abs=1e-12)

    def test_against_numpy_oracle(self, rng):
        x = rng.standard_normal(100)
        y = 0.3 * x + rng.standard_normal(100)
        fit = pearson_fit(x, y)
        r_np = np.corrcoef(x, y)[0, 1]
        slope_np, intercept_np = np.polyfit(x, y, 1)
        assert fit.r == pytest.approx(r_np, abs=1e-12)
        assert fit.slope == pytest.approx(slope_np, abs=1e-10)
        assert fit.intercept == pytest.approx(intercept_np, abs=1e-10)
