"""Confidence sets for theta_star: the gradient-based set and its convex relaxation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import MatrixError
from .estimation import (
    History, RegSchedule, _design_g, _design_hessian, _design_loss, _design_loss_many,
    beta_radius, fit_mle,
    gamma_radius, lambda_at,
)
from .logistic import alpha_tilde_z, alpha_z, mu, mu_dot

MEMBERSHIP_SLACK = 1e-9


def within(lhs: float, rhs: float) -> bool:
    """lhs <= rhs up to the membership slack."""
    return lhs <= rhs + MEMBERSHIP_SLACK * max(1.0, abs(rhs))


def cholesky(m) -> np.ndarray:
    try:
        return np.linalg.cholesky(np.asarray(m, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise MatrixError(f"matrix is not positive definite: {exc}") from None


def weighted_norm(v, m) -> float:
    """sqrt(v' M v), computed from the Cholesky factor of M."""
    L = cholesky(m)
    return float(np.linalg.norm(L.T @ np.asarray(v, dtype=float)))


def weighted_norm_inv(v, m) -> float:
    """sqrt(v' M^{-1} v) without forming the inverse."""
    L = cholesky(m)
    return float(np.linalg.norm(solve_triangular(L, np.asarray(v, dtype=float), lower=True)))


@dataclass(frozen=True, eq=False)
class ConfidenceState:
    history_len: int
    theta_hat: np.ndarray
    lam: float
    gamma: float
    beta: float
    delta: float
    s_bound: float
    loss_at_hat: float
    hessian_factor_at_hat: np.ndarray

    @property
    def t(self) -> int:
        """Round index the state serves (one past the last observed round)."""
        return self.history_len + 1

    @property
    def loss_level(self) -> float:
        return self.loss_at_hat + self.beta ** 2


def build_state(h: History, delta: float, s_bound: float, sched: RegSchedule | None = None,
                t: int | None = None, theta0=None, tol: float = 1e-9) -> ConfidenceState:
    """Fit the MLE on h and assemble the round-t belief (t defaults to len(h) + 1)."""
    sched = sched or RegSchedule(h.dim)
    t = len(h) + 1 if t is None else t
    lam = lambda_at(sched, t)
    mle = fit_mle(h, lam, tol=tol, theta0=theta0)
    X, n, _ = h.design()
    gamma = gamma_radius(t, h.dim, lam, delta, s_bound)
    return ConfidenceState(
        history_len=len(h),
        theta_hat=mle.theta_hat,
        lam=lam,
        gamma=gamma,
        beta=beta_radius(gamma, lam),
        delta=delta,
        s_bound=s_bound,
        loss_at_hat=mle.loss_value,
        hessian_factor_at_hat=cholesky(_design_hessian(X, n, mle.theta_hat, lam)),
    )


def c_statistic(theta, h: History, st: ConfidenceState) -> float:
    """|| g_t(theta) - g_t(theta_hat) || in the H_t(theta)^{-1} norm."""
    X, n, _ = h.design()
    theta = np.asarray(theta, dtype=float)
    diff = _design_g(X, n, theta, st.lam) - _design_g(X, n, st.theta_hat, st.lam)
    return weighted_norm_inv(diff, _design_hessian(X, n, theta, st.lam))


def in_C(theta, h: History, st: ConfidenceState) -> bool:
    theta = np.asarray(theta, dtype=float)
    if not within(float(np.linalg.norm(theta)), st.s_bound):
        return False
    return within(c_statistic(theta, h, st), st.gamma)


def in_E(theta, h: History, st: ConfidenceState) -> bool:
    theta = np.asarray(theta, dtype=float)
    if not within(float(np.linalg.norm(theta)), st.s_bound):
        return False
    X, n, s = h.design()
    gap = _design_loss(X, n, s, theta, st.lam) - st.loss_at_hat
    return within(gap, st.beta ** 2)


def in_C_many(thetas, h: History, st: ConfidenceState) -> np.ndarray:
    """Vectorized in_C over the rows of thetas."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    X, n, _ = h.design()
    d = thetas.shape[1]
    z = thetas @ X.T
    g = (mu(z) * n) @ X + st.lam * thetas
    diff = g - _design_g(X, n, st.theta_hat, st.lam)
    H = np.einsum("nk,ki,kj->nij", mu_dot(z) * n, X, X) + st.lam * np.eye(d)
    sol = np.linalg.solve(H, diff[..., None])[..., 0]
    stat = np.sqrt(np.maximum(np.einsum("ni,ni->n", diff, sol), 0.0))
    slack = MEMBERSHIP_SLACK * max(1.0, st.s_bound)
    ok_ball = np.linalg.norm(thetas, axis=1) <= st.s_bound + slack
    return ok_ball & (stat <= st.gamma + MEMBERSHIP_SLACK * max(1.0, st.gamma))


def in_E_many(thetas, h: History, st: ConfidenceState) -> np.ndarray:
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    X, n, s = h.design()
    gap = _design_loss_many(X, n, s, thetas, st.lam) - st.loss_at_hat
    b2 = st.beta ** 2
    ok_ball = np.linalg.norm(thetas, axis=1) <= st.s_bound + MEMBERSHIP_SLACK * max(1.0, st.s_bound)
    return ok_ball & (gap <= b2 + MEMBERSHIP_SLACK * max(1.0, b2))


def g_matrix(h: History, theta1, theta2, lam: float) -> np.ndarray:
    """Sum of alpha(x_s, theta1, theta2) x_s x_s' plus lam I."""
    X, n, _ = h.design()
    w = n * alpha_z(X @ np.asarray(theta1, float), X @ np.asarray(theta2, float))
    return (X.T * w) @ X + lam * np.eye(h.dim)


def g_tilde_matrix(h: History, theta1, theta2, lam: float) -> np.ndarray:
    X, n, _ = h.design()
    z1 = X @ np.asarray(theta1, float)
    w = n * alpha_tilde_z(z1, X @ np.asarray(theta2, float) - z1)
    return (X.T * w) @ X + lam * np.eye(h.dim)


def deviation_bound(theta, theta_star, h: History, st: ConfidenceState) -> tuple[float, float]:
    """(||theta - theta_star||_{H_t(theta_star)}, 2 (1 + 2S) gamma) for parameters of C_t."""
    X, n, _ = h.design()
    H = _design_hessian(X, n, np.asarray(theta_star, float), st.lam)
    lhs = weighted_norm(np.asarray(theta, float) - theta_star, H)
    return lhs, 2.0 * (1.0 + 2.0 * st.s_bound) * st.gamma


def relaxed_deviation_bound(theta, theta_star, h: History, st: ConfidenceState) -> tuple[float, float]:
    """Same left-hand side, right-hand side valid for every parameter of E_t."""
    lhs, _ = deviation_bound(theta, theta_star, h, st)
    S = st.s_bound
    return lhs, (2.0 + 2.0 * S) * st.gamma + 2.0 * math.sqrt(1.0 + S) * st.beta
