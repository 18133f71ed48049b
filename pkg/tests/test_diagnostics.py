from __future__ import annotations

import numpy as np
import pytest

from logbandit.diagnostics import (
    SUITES, SuiteResult, _tally, determinant_trace, elliptical_potential, exp_ineq_lhs, exp_inequality,
    polynomial_inequality, potential_terms, run_lemma_suites, self_concordance_ratio, self_concordance_slope,
    self_concordance_tilde,
)


def rng(seed=0):
    return np.random.default_rng(seed)


def test_tally_counts_and_nan():
    res = _tally("t", np.array([0.0, 2.0, np.nan]), np.array([1.0, 1.0, 1.0]))
    assert res.violations == 2
    assert res.max_excess == pytest.approx(1.0)
    assert not res.passed


def test_tally_relative_slack():
    assert _tally("t", np.array([1.0 + 1e-9]), np.array([1.0])).passed
    assert not _tally("t", np.array([1.0 + 1e-7]), np.array([1.0])).passed


def test_exp_ineq_lhs_series_matches_direct():
    x = np.array([1e-3 * (1 - 1e-9), 1e-3])
    assert exp_ineq_lhs(x)[0] == pytest.approx(exp_ineq_lhs(x)[1], rel=1e-9)
    assert exp_ineq_lhs(np.array([0.0]))[0] == 0.5
    # direct evaluation at a moderate point
    assert exp_ineq_lhs(np.array([2.0]))[0] == pytest.approx((1 + (np.exp(-2.0) - 1) / 2) / 2, rel=1e-14)


@pytest.mark.parametrize("suite", [
    self_concordance_slope, self_concordance_tilde, self_concordance_ratio, exp_inequality,
    polynomial_inequality, determinant_trace, elliptical_potential,
])
def test_suite_small_run(suite):
    res = suite(rng(1), 2000)
    assert isinstance(res, SuiteResult)
    assert res.cases > 0
    assert res.passed, res


def test_suites_detect_broken_inequality():
    # a deliberately wrong right-hand side must produce violations
    x = np.logspace(-8, 3, 1000)
    broken = _tally("broken", 1.0 / (1.0 + x), exp_ineq_lhs(x))
    assert broken.violations > 0


def test_potential_terms_first_round():
    arms = np.array([[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]])
    lams = np.ones((1, 3))
    terms = potential_terms(arms, lams)[0]
    assert terms[0] == pytest.approx(1.0)
    assert terms[1] == pytest.approx(1.0)
    assert terms[2] == pytest.approx(0.5)


def test_run_lemma_suites_reproducible():
    a = run_lemma_suites(5000, seed=3)
    b = run_lemma_suites(5000, seed=3)
    assert [r.name for r in a] == list(SUITES)
    assert [(r.violations, r.max_excess) for r in a] == [(r.violations, r.max_excess) for r in b]
