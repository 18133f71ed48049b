from __future__ import annotations

import math

import numpy as np
import pytest

from logbandit.errors import DomainError, NonConvergenceError
from logbandit.estimation import (
    History, RegSchedule, beta_radius, fit_mle, g_vector, gamma_radius, hessian, lambda_at, log_loss,
    newton_minimize, reward_weighted_sum,
)


def random_history(seed: int, d: int = 3, n: int = 40, distinct: int | None = None) -> History:
    rng = np.random.default_rng(seed)
    k = distinct or n
    pool = rng.normal(size=(k, d))
    pool /= np.linalg.norm(pool, axis=1, keepdims=True)
    pool *= rng.uniform(0.2, 1.0, size=(k, 1))
    idx = rng.integers(0, k, size=n)
    return History(d, pool[idx], rng.integers(0, 2, size=n))


def naive_loss(h: History, theta, lam):
    """Per-round sum written directly from the definition (no aggregation)."""
    total = 0.0
    for x, r in zip(h.arms, h.rewards):
        z = float(x @ theta)
        p = 1.0 / (1.0 + math.exp(-z))
        total -= r * math.log(p) + (1 - r) * math.log(1 - p)
    return total + 0.5 * lam * float(theta @ theta)


def bisect(f, lo, hi, tol=1e-10):
    flo = f(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if (f(mid) > 0) == (flo > 0):
            lo, flo = mid, f(mid)
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- History -----------------------------------------------------------------

def test_history_append_and_design():
    h = History(2)
    h.append(np.array([1.0, 0.0]), 1)
    h.append(np.array([0.0, 1.0]), 0)
    h.append(np.array([1.0, 0.0]), 1)
    assert len(h) == 3
    X, n, s = h.design()
    assert X.shape == (2, 2)
    assert list(n) == [2, 1]
    assert list(s) == [2, 0]
    assert np.array_equal(h.rewards, [1, 0, 1])


def test_history_rejects_bad_inputs():
    h = History(2)
    with pytest.raises(DomainError):
        h.append(np.array([1.0, 0.0]), 2)
    with pytest.raises(DomainError):
        h.append(np.array([1.0, 0.0, 0.0]), 1)
    with pytest.raises(DomainError):
        h.append(np.array([1.0, 1.0]), 1)


def test_history_prefix_and_growth():
    h = random_history(0, n=100)
    p = h.prefix(30)
    assert len(p) == 30
    assert np.array_equal(p.arms, h.arms[:30])
    assert np.allclose(reward_weighted_sum(h), (h.arms * h.rewards[:, None]).sum(axis=0), rtol=0, atol=1e-12)


# -- regularization schedule --------------------------------------------------

def test_lambda_floor_active_at_one():
    assert lambda_at(RegSchedule(2), 1) == 1.0


def test_lambda_values():
    assert lambda_at(RegSchedule(2), 100) == pytest.approx(2 * math.log(100))
    assert lambda_at(RegSchedule(2), 100) == pytest.approx(9.2103, abs=1e-4)
    assert lambda_at(RegSchedule(5), 1000) == pytest.approx(34.539, abs=1e-3)


def test_lambda_rejects_round_zero():
    with pytest.raises(DomainError):
        lambda_at(RegSchedule(2), 0)


# -- loss and derivatives ----------------------------------------------------

def test_loss_empty_history():
    assert log_loss(History(3), np.zeros(3), 1.0) == 0.0


def test_loss_single_round_at_zero():
    h = History(1, np.array([[1.0]]), [1])
    assert log_loss(h, np.zeros(1), 0.0) == pytest.approx(math.log(2))


def test_loss_no_overflow():
    h = History(2, np.array([[1.0, 0.0]]), [1])
    v = log_loss(h, np.array([1e4, 0.0]), 2.0)
    assert math.isfinite(v)
    assert v == pytest.approx(1e8, rel=1e-12)
    h0 = History(2, np.array([[1.0, 0.0]]), [0])
    assert log_loss(h0, np.array([1e4, 0.0]), 2.0) == pytest.approx(1e8 + 1e4, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_loss_matches_naive_sum(seed):
    h = random_history(seed)
    theta = np.random.default_rng(seed + 10).normal(size=3)
    assert log_loss(h, theta, 1.7) == pytest.approx(naive_loss(h, theta, 1.7), rel=1e-12)


def test_g_vector_pure_regularizer():
    v = np.array([0.3, -1.0])
    assert np.allclose(g_vector(History(2), v, 3.0), 3 * v)


def test_g_vector_two_rounds_at_zero():
    h = History(3, np.array([[1.0, 0, 0], [1.0, 0, 0]]), [0, 1])
    assert np.allclose(g_vector(h, np.zeros(3), 1.0), [1.0, 0.0, 0.0])


@pytest.mark.parametrize("seed", range(5))
def test_g_vector_finite_difference(seed):
    h = random_history(seed)
    theta = np.random.default_rng(seed + 20).normal(size=3)
    lam = 2.0
    step = 1e-6
    fd = np.array([
        (naive_loss(h, theta + step * e, lam) - naive_loss(h, theta - step * e, lam)) / (2 * step)
        for e in np.eye(3)
    ])
    # gradient of the loss plus the reward-weighted sum gives g
    assert np.allclose(g_vector(h, theta, lam), fd + reward_weighted_sum(h), atol=1e-6)


def test_hessian_empty():
    assert np.array_equal(hessian(History(3), np.zeros(3), 2.0), 2 * np.eye(3))


def test_hessian_single_round():
    h = History(2, np.array([[1.0, 0.0]]), [1])
    assert np.allclose(hessian(h, np.zeros(2), 1.0), np.diag([1.25, 1.0]))


@pytest.mark.parametrize("seed", range(5))
def test_hessian_finite_difference(seed):
    h = random_history(seed)
    theta = np.random.default_rng(seed + 30).normal(size=3)
    lam = 1.5
    step = 1e-5
    cols = [(g_vector(h, theta + step * e, lam) - g_vector(h, theta - step * e, lam)) / (2 * step) for e in np.eye(3)]
    H = hessian(h, theta, lam)
    assert np.allclose(H, np.column_stack(cols), atol=1e-4)
    assert np.allclose(H, H.T)
    assert np.all(np.linalg.eigvalsh(H) >= lam - 1e-12)


# -- MLE ---------------------------------------------------------------------

def test_mle_symmetric_rewards():
    h = History(1, np.array([[1.0], [1.0]]), [1, 0])
    assert abs(fit_mle(h, 1.0).theta_hat[0]) < 1e-10


def test_mle_two_successes_bisection_oracle():
    h = History(1, np.array([[1.0], [1.0]]), [1, 1])
    root = bisect(lambda th: 2.0 / (1.0 + math.exp(-th)) - 2.0 + th, 0.0, 2.0)
    res = fit_mle(h, 1.0)
    assert res.theta_hat[0] == pytest.approx(root, abs=1e-9)
    assert root == pytest.approx(0.674832, abs=1e-6)
    assert res.grad_norm <= 1e-9


def test_mle_empty_history():
    res = fit_mle(History(4), 1.0)
    assert np.array_equal(res.theta_hat, np.zeros(4))
    assert res.iterations == 0


@pytest.mark.parametrize("seed", range(5))
def test_mle_stationary_and_warm_start(seed):
    h = random_history(seed, n=200, distinct=12)
    lam = 1.3
    res = fit_mle(h, lam)
    g = g_vector(h, res.theta_hat, lam) - reward_weighted_sum(h)
    assert np.linalg.norm(g) <= 1e-9
    warm = fit_mle(h, lam, theta0=res.theta_hat)
    assert warm.iterations <= 1
    assert np.allclose(warm.theta_hat, res.theta_hat, atol=1e-10)


def test_mle_rejects_bad_lambda():
    with pytest.raises(DomainError):
        fit_mle(History(2), 0.0)


def test_newton_nonconvergence_carries_best_iterate():
    def fun(x):
        return float(np.cosh(x[0])), np.array([np.sinh(x[0])]), np.array([[np.cosh(x[0])]])

    with pytest.raises(NonConvergenceError) as info:
        newton_minimize(fun, np.array([5.0]), tol=1e-12, max_iter=1)
    assert info.value.best is not None
    assert info.value.residual > 0


# -- radii -------------------------------------------------------------------

def test_gamma_reference_value():
    lam = 9.2305
    g = gamma_radius(100, 2, lam, 0.1, 1.0)
    expected = math.sqrt(lam) * 1.5 + 2 / math.sqrt(lam) * math.log(40 * (1 + 100 / (32 * lam)))
    assert g == pytest.approx(expected, rel=1e-14)
    assert g == pytest.approx(7.18, abs=5e-3)


def test_gamma_delta_one_boundary():
    lam, t, d, S = 3.0, 10, 2, 1.0
    expected = math.sqrt(lam) * (S + 0.5) + d / math.sqrt(lam) * math.log(4.0 * (1 + t / (16 * d * lam)))
    assert gamma_radius(t, d, lam, 1.0, S) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("delta", [0.0, -0.1, 1.5])
def test_gamma_rejects_bad_delta(delta):
    with pytest.raises(DomainError):
        gamma_radius(10, 2, 1.0, delta, 1.0)


def test_beta_values():
    assert beta_radius(2.0, 4.0) == 4.0
    assert beta_radius(0.0, 3.0) == 0.0
    assert beta_radius(7.18, 9.2305) == pytest.approx(24.15, abs=1e-2)
