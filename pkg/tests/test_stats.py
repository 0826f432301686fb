import math

import numpy as np
import pytest
import scipy.special
import scipy.stats

from opfdesign.stats import (
    StatTest,
    betainc_reg,
    chi_squared_gof,
    chi_squared_test,
    fisher_combine,
    gammainc_lower_reg,
    gammainc_upper_reg,
    welch_t_test,
)


def test_incomplete_beta_against_reference():
    rng = np.random.default_rng(0)
    for _ in range(300):
        a = rng.uniform(0.5, 50)
        b = rng.uniform(0.5, 50)
        x = rng.uniform(0, 1)
        assert betainc_reg(a, b, x) == pytest.approx(scipy.special.betainc(a, b, x), abs=1e-10)
    assert betainc_reg(2.0, 3.0, 0.0) == 0.0
    assert betainc_reg(2.0, 3.0, 1.0) == 1.0


def test_incomplete_gamma_against_reference():
    rng = np.random.default_rng(1)
    for _ in range(300):
        a = rng.uniform(0.5, 60)
        x = rng.uniform(0, 80)
        assert gammainc_lower_reg(a, x) == pytest.approx(scipy.special.gammainc(a, x), abs=1e-10)
        assert gammainc_upper_reg(a, x) == pytest.approx(scipy.special.gammaincc(a, x), abs=1e-10)


def test_welch_identical_samples():
    result = welch_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert result.statistic == 0.0
    assert result.p_value == pytest.approx(1.0)


def test_welch_reference_case():
    a = (1.0, 2.0, 3.0, 4.0, 5.0)
    b = (3.0, 4.0, 5.0, 6.0, 7.0)
    result = welch_t_test(a, b)
    ref = scipy.stats.ttest_ind(a, b, equal_var=False)
    assert result.p_value == pytest.approx(ref.pvalue, abs=1e-6)
    assert result.statistic == pytest.approx(ref.statistic, abs=1e-9)


def test_welch_matches_reference_on_random_samples():
    rng = np.random.default_rng(2)
    for _ in range(100):
        a = rng.normal(0, 1, rng.integers(3, 30))
        b = rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 2), rng.integers(3, 30))
        result = welch_t_test(a, b)
        ref = scipy.stats.ttest_ind(a, b, equal_var=False)
        assert result.p_value == pytest.approx(ref.pvalue, abs=1e-9)


def test_welch_scale_invariance():
    rng = np.random.default_rng(3)
    a = rng.normal(2, 1, 12)
    b = rng.normal(3, 2, 9)
    p0 = welch_t_test(a, b).p_value
    for scale in (0.001, 7.3, 1e6):
        assert welch_t_test(scale * a, scale * b).p_value == pytest.approx(p0, rel=1e-9)
    # common affine shifts with positive scale leave p unchanged too
    assert welch_t_test(2 * a + 5, 2 * b + 5).p_value == pytest.approx(p0, rel=1e-9)


def test_welch_degenerate_variances():
    equal = welch_t_test([2.0, 2.0, 2.0], [2.0, 2.0])
    assert equal.degenerate and equal.p_value == 1.0
    unequal = welch_t_test([2.0, 2.0, 2.0], [3.0, 3.0])
    assert unequal.degenerate and unequal.p_value == 0.0


def test_welch_small_sample_precondition():
    with pytest.raises(ValueError):
        welch_t_test([1.0], [2.0, 3.0])


def test_chi_squared_proportional_rows():
    result = chi_squared_test([[10, 20, 30], [1, 2, 3]])
    assert result.statistic == pytest.approx(0.0, abs=1e-12)
    assert result.p_value == pytest.approx(1.0)


def test_chi_squared_diagonal_case():
    result = chi_squared_test([[10, 0], [0, 10]])
    assert result.statistic == pytest.approx(20.0)
    assert result.dof == 1
    assert result.p_value == pytest.approx(7.744e-6, rel=1e-3)
    ref_stat, ref_p, ref_dof, _ = scipy.stats.chi2_contingency([[10, 0], [0, 10]], correction=False)
    assert result.statistic == pytest.approx(ref_stat)
    assert result.p_value == pytest.approx(ref_p, abs=1e-10)


def test_chi_squared_row_swap_invariance():
    rng = np.random.default_rng(4)
    for _ in range(50):
        table = rng.integers(1, 40, (2, 3))
        p1 = chi_squared_test(table).p_value
        p2 = chi_squared_test(table[::-1]).p_value
        perm = rng.permutation(3)
        p3 = chi_squared_test(table[:, perm]).p_value
        assert p1 == pytest.approx(p2, rel=1e-12)
        assert p1 == pytest.approx(p3, rel=1e-9)


def test_chi_squared_matches_reference_on_random_tables():
    rng = np.random.default_rng(5)
    for _ in range(100):
        table = rng.integers(1, 60, (2, rng.integers(2, 5)))
        result = chi_squared_test(table)
        ref_stat, ref_p, ref_dof, _ = scipy.stats.chi2_contingency(table, correction=False)
        assert result.statistic == pytest.approx(ref_stat, rel=1e-12)
        assert result.p_value == pytest.approx(ref_p, abs=1e-9)
        assert result.dof == ref_dof


def test_chi_squared_zero_margin_degenerate():
    result = chi_squared_test([[0, 0, 0], [5, 2, 3]])
    assert result.degenerate
    assert result.p_value == 1.0


def test_chi_squared_gof_uniform_counts():
    result = chi_squared_gof([100, 100, 100], [100, 100, 100])
    assert result.p_value == pytest.approx(1.0)
    ref = scipy.stats.chisquare([90, 110, 100], [100, 100, 100])
    mine = chi_squared_gof([90, 110, 100], [100, 100, 100])
    assert mine.p_value == pytest.approx(ref.pvalue, abs=1e-10)


def test_fisher_all_ones():
    result = fisher_combine([1.0, 1.0, 1.0])
    assert result.statistic == pytest.approx(0.0)
    assert result.p_value == pytest.approx(1.0)


def test_fisher_reference_case():
    result = fisher_combine([0.05, 0.05])
    assert result.statistic == pytest.approx(-4 * math.log(0.05), rel=1e-12)
    assert result.statistic == pytest.approx(11.98, abs=0.01)
    ref_stat, ref_p = scipy.stats.combine_pvalues([0.05, 0.05], method="fisher")
    assert result.p_value == pytest.approx(ref_p, abs=1e-10)
    assert result.p_value == pytest.approx(0.0175, abs=2e-4)


def test_fisher_permutation_invariance():
    ps = [0.9, 0.04, 0.3, 0.77]
    assert fisher_combine(ps).p_value == pytest.approx(fisher_combine(ps[::-1]).p_value, rel=1e-12)


def test_fisher_monotone_in_each_input():
    rng = np.random.default_rng(6)
    for _ in range(100):
        ps = rng.uniform(0.001, 1.0, 4)
        base = fisher_combine(ps).p_value
        bumped = ps.copy()
        i = rng.integers(0, 4)
        bumped[i] = min(1.0, bumped[i] + rng.uniform(0.01, 0.3))
        assert fisher_combine(bumped).p_value >= base - 1e-12


def test_fisher_floors_tiny_p_values():
    result = fisher_combine([0.0, 0.5])
    assert np.isfinite(result.statistic)
    assert 0.0 <= result.p_value <= 1.0
