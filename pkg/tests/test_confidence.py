from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from logbandit.confidence import (
    build_state, c_statistic, cholesky, deviation_bound, g_matrix, g_tilde_matrix, in_C, in_C_many, in_E,
    in_E_many, relaxed_deviation_bound, weighted_norm, weighted_norm_inv,
)
from logbandit.errors import MatrixError
from logbandit.estimation import History, g_vector, hessian, log_loss


def sampled_history(seed: int, d: int = 2, n: int = 60, theta=None) -> History:
    rng = np.random.default_rng(seed)
    theta = np.array([1.0, -0.5, 0.3][:d]) if theta is None else theta
    arms = rng.normal(size=(n, d))
    arms /= np.linalg.norm(arms, axis=1, keepdims=True)
    p = 1.0 / (1.0 + np.exp(-(arms @ theta)))
    return History(d, arms, (rng.random(n) < p).astype(int))


# -- weighted norms ----------------------------------------------------------

def test_weighted_norm_identity():
    assert weighted_norm(np.array([3.0, 4.0]), np.eye(2)) == pytest.approx(5.0)


def test_weighted_norm_diagonal():
    assert weighted_norm(np.array([1.0, 0.0]), np.diag([4.0, 1.0])) == pytest.approx(2.0)


@pytest.mark.parametrize("seed", range(5))
def test_weighted_norms_match_dense(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(4, 4))
    M = A @ A.T + 0.5 * np.eye(4)
    v = rng.normal(size=4)
    assert weighted_norm(v, M) == pytest.approx(math.sqrt(v @ M @ v), rel=1e-10)
    assert weighted_norm_inv(v, M) == pytest.approx(math.sqrt(v @ np.linalg.inv(M) @ v), rel=1e-10)


def test_cholesky_rejects_indefinite():
    with pytest.raises(MatrixError):
        cholesky(np.diag([1.0, -1.0]))


# -- membership ----------------------------------------------------------------

def test_theta_hat_is_member():
    h = sampled_history(0)
    st = build_state(h, 0.1, 2.0)
    assert np.linalg.norm(st.theta_hat) <= 2.0
    assert in_C(st.theta_hat, h, st)
    assert in_E(st.theta_hat, h, st)


def test_outside_ball_rejected():
    h = sampled_history(1)
    st = build_state(h, 0.1, 2.0)
    theta = np.array([2.1, 0.0])
    assert not in_C(theta, h, st)
    assert not in_E(theta, h, st)


def test_in_C_scalar_hand_computation():
    h = History(1, np.array([[1.0]]), [1])
    st = build_state(h, 0.1, 3.0)
    lam, th_hat, gam = st.lam, st.theta_hat[0], st.gamma
    for theta in np.linspace(-3.0, 3.0, 61):
        g = 1.0 / (1.0 + math.exp(-theta)) + lam * theta
        g_hat = 1.0 / (1.0 + math.exp(-th_hat)) + lam * th_hat
        md = math.exp(-theta) / (1.0 + math.exp(-theta)) ** 2
        stat = abs(g - g_hat) / math.sqrt(md + lam)
        assert c_statistic(np.array([theta]), h, st) == pytest.approx(stat, rel=1e-10)
        if abs(stat - gam) > 1e-6:
            assert in_C(np.array([theta]), h, st) == (stat <= gam)


@pytest.mark.parametrize("seed", range(4))
def test_in_E_far_ray_excluded(seed):
    h = sampled_history(seed, n=300)
    # a tight level set inside a wide ball isolates the loss-gap test
    st = dataclasses.replace(build_state(h, 0.1, 2.0), beta=1.5, s_bound=50.0)
    direction = np.random.default_rng(seed).normal(size=2)
    direction /= np.linalg.norm(direction)
    # march out until the loss gap exceeds beta^2, staying inside the ball
    r = 0.0
    while log_loss(h, st.theta_hat + r * direction, st.lam) - st.loss_at_hat <= st.beta ** 2:
        r += 0.25
    theta = st.theta_hat + r * direction
    assert np.linalg.norm(theta) <= 50.0
    assert not in_E(theta, h, st)
    assert in_E(st.theta_hat + 0.5 * (r - 0.25) * direction, h, st)


@pytest.mark.parametrize("seed", range(3))
def test_vectorized_membership_matches_scalar(seed):
    h = sampled_history(seed, n=80)
    st = build_state(h, 0.1, 2.0)
    # small beta-scale perturbations so both outcomes occur
    rng = np.random.default_rng(seed + 5)
    thetas = st.theta_hat + rng.normal(size=(300, 2)) * 1.5
    mc = in_C_many(thetas, h, st)
    me = in_E_many(thetas, h, st)
    assert list(mc) == [in_C(t, h, st) for t in thetas]
    assert list(me) == [in_E(t, h, st) for t in thetas]


@pytest.mark.parametrize("seed", range(5))
def test_C_contained_in_E(seed):
    h = sampled_history(seed, n=150)
    st = build_state(h, 0.1, 2.0)
    rng = np.random.default_rng(seed + 100)
    r = 2.0 * np.sqrt(rng.random(5000))
    a = rng.uniform(0, 2 * np.pi, 5000)
    thetas = np.column_stack([r * np.cos(a), r * np.sin(a)])
    c = in_C_many(thetas, h, st)
    e = in_E_many(thetas, h, st)
    assert not np.any(c & ~e)


# -- slope matrices ------------------------------------------------------------

def test_g_matrix_degenerate_equals_hessian():
    h = sampled_history(3, d=3)
    th = np.array([0.2, 0.4, -0.1])
    assert np.allclose(g_matrix(h, th, th, 1.5), hessian(h, th, 1.5), rtol=1e-12)


def test_g_matrix_empty_history():
    assert np.array_equal(g_matrix(History(3), np.zeros(3), np.ones(3), 2.5), 2.5 * np.eye(3))


@pytest.mark.parametrize("seed", range(5))
def test_mean_value_identity(seed):
    h = sampled_history(seed, d=3)
    rng = np.random.default_rng(seed)
    t1, t2 = rng.normal(size=3) * 2, rng.normal(size=3) * 2
    lam = 1.7
    G = g_matrix(h, t1, t2, lam)
    resid = g_vector(h, t1, lam) - g_vector(h, t2, lam) - G @ (t1 - t2)
    assert np.linalg.norm(resid) <= 1e-8


@pytest.mark.parametrize("seed", range(3))
def test_g_tilde_integral_remainder(seed):
    # L(t2) = L(t1) + grad L(t1).(t2 - t1) + ||t2 - t1||^2_{G~(t1, t2)} - lam/2 ||t2 - t1||^2
    # (G~ carries the full lam I while the loss regularizer is lam/2 |theta|^2)
    h = sampled_history(seed, d=3)
    rng = np.random.default_rng(seed + 1)
    t1, t2 = rng.normal(size=3), rng.normal(size=3)
    lam = 0.8
    grad = g_vector(h, t1, lam) - (h.arms * h.rewards[:, None]).sum(axis=0)
    Gt = g_tilde_matrix(h, t1, t2, lam)
    dv = t2 - t1
    lhs = log_loss(h, t2, lam)
    rhs = log_loss(h, t1, lam) + grad @ dv + dv @ Gt @ dv - 0.5 * lam * dv @ dv
    assert lhs == pytest.approx(rhs, rel=1e-10)


# -- deviation bound ---------------------------------------------------------

def test_deviation_zero_at_theta_star():
    h = sampled_history(0)
    st = build_state(h, 0.1, 2.0)
    star = np.array([1.0, -0.5])
    lhs, rhs = deviation_bound(star, star, h, st)
    assert lhs == 0.0
    assert rhs > 0


def test_deviation_rhs_arithmetic():
    h = History(2)
    st = build_state(h, 0.1, 1.0)
    _, rhs = deviation_bound(np.zeros(2), np.zeros(2), h, st)
    assert rhs == pytest.approx(6.0 * st.gamma)
    # the reference pair from the documentation
    assert 6.0 * 7.18 == pytest.approx(43.08)


@pytest.mark.parametrize("seed", range(6))
def test_deviation_bound_holds_on_C(seed):
    star = np.array([1.0, -0.5])
    h = sampled_history(seed, n=200, theta=star)
    st = build_state(h, 0.1, 2.0)
    if not in_C(star, h, st):
        pytest.skip("outside the good event")
    rng = np.random.default_rng(seed)
    r = 2.0 * np.sqrt(rng.random(3000))
    a = rng.uniform(0, 2 * np.pi, 3000)
    thetas = np.column_stack([r * np.cos(a), r * np.sin(a)])
    members = thetas[in_C_many(thetas, h, st)]
    assert members.size
    for th in members[:200]:
        lhs, rhs = deviation_bound(th, star, h, st)
        assert lhs <= rhs
        lhs2, rhs2 = relaxed_deviation_bound(th, star, h, st)
        assert lhs2 == lhs and rhs2 >= lhs


def test_state_fields():
    h = sampled_history(2, n=99)
    st = build_state(h, 0.1, 2.0)
    assert st.t == 100
    assert st.lam == pytest.approx(2 * math.log(100))
    assert st.beta == pytest.approx(st.gamma + st.gamma ** 2 / math.sqrt(st.lam))
    assert st.loss_level == pytest.approx(st.loss_at_hat + st.beta ** 2)
    L = st.hessian_factor_at_hat
    assert np.allclose(L @ L.T, hessian(h, st.theta_hat, st.lam))
