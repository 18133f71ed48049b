"""Regularized logistic log-loss, its derivatives, the Newton MLE and the radii.

All loss-side functions work on the aggregated design of a History: the
distinct arms played, how often each was played and how many of those plays
returned 1. Arms drawn from a finite (or discretized) set therefore cost
O(#distinct arms) per evaluation instead of O(t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NonConvergenceError
from .logistic import check_arm, mu, mu_dot, softplus


class History:
    """Append-only record of (arm, reward) rounds."""

    def __init__(self, dim: int, arms=None, rewards=None):
        self.dim = int(dim)
        self._arms = np.empty((16, self.dim))
        self._rewards = np.empty(16, dtype=np.int8)
        self._len = 0
        self._index: dict[bytes, int] = {}
        self._ux = np.empty((8, self.dim))
        self._counts = np.zeros(8)
        self._succ = np.zeros(8)
        if arms is not None:
            self.extend(arms, rewards)

    def __len__(self) -> int:
        return self._len

    def append(self, arm, reward) -> None:
        arm = check_arm(arm)
        if arm.shape[0] != self.dim:
            raise DomainError("arm dimension mismatch")
        if reward not in (0, 1):
            raise DomainError(f"reward must be 0 or 1, got {reward!r}")
        if self._len == self._arms.shape[0]:
            self._arms = np.concatenate([self._arms, np.empty_like(self._arms)])
            self._rewards = np.concatenate([self._rewards, np.empty_like(self._rewards)])
        self._arms[self._len] = arm
        self._rewards[self._len] = reward
        self._len += 1
        # +0.0 folds -0.0 into 0.0 so equal arms share a key
        key = (arm + 0.0).tobytes()
        k = self._index.get(key)
        if k is None:
            k = len(self._index)
            if k == self._ux.shape[0]:
                self._ux = np.concatenate([self._ux, np.empty_like(self._ux)])
                self._counts = np.concatenate([self._counts, np.zeros_like(self._counts)])
                self._succ = np.concatenate([self._succ, np.zeros_like(self._succ)])
            self._index[key] = k
            self._ux[k] = arm
        self._counts[k] += 1.0
        self._succ[k] += reward

    def extend(self, arms, rewards) -> None:
        arms = np.atleast_2d(np.asarray(arms, dtype=float))
        for x, r in zip(arms, np.asarray(rewards).tolist()):
            self.append(x, int(r))

    @property
    def arms(self) -> np.ndarray:
        return self._arms[: self._len]

    @property
    def rewards(self) -> np.ndarray:
        return self._rewards[: self._len]

    def design(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(distinct arms, play counts, reward sums), in first-seen order."""
        k = len(self._index)
        return self._ux[:k], self._counts[:k], self._succ[:k]

    def prefix(self, n: int) -> "History":
        return History(self.dim, self.arms[:n], self.rewards[:n])


@dataclass(frozen=True)
class RegSchedule:
    dimension: int
    floor: float = 1.0

    def __post_init__(self):
        if self.dimension < 1 or not self.floor > 0:
            raise DomainError("schedule needs a positive dimension and floor")


def lambda_at(sched: RegSchedule, t: int) -> float:
    """Regularization at round t: max(floor, d log t)."""
    if t < 1:
        raise DomainError(f"round index must be >= 1, got {t}")
    return max(sched.floor, sched.dimension * math.log(t))


# -- loss and derivatives ----------------------------------------------------
# The _design_* helpers take the aggregated design directly so that planners
# can call them in tight loops without re-reading the History.

def _design_loss(X, n, s, theta, lam):
    z = X @ theta
    return float(n @ softplus(z) - s @ z) + 0.5 * lam * float(theta @ theta)


def _design_loss_many(X, n, s, thetas, lam):
    z = thetas @ X.T
    return softplus(z) @ n - z @ s + 0.5 * lam * np.einsum("ij,ij->i", thetas, thetas)


def _design_g(X, n, theta, lam):
    return X.T @ (n * mu(X @ theta)) + lam * theta


def _design_hessian(X, n, theta, lam):
    w = n * mu_dot(X @ theta)
    return (X.T * w) @ X + lam * np.eye(X.shape[1])


def _design_all(X, n, s, theta, lam):
    """Loss, gradient of the loss and Hessian in one pass."""
    z = X @ theta
    e = np.exp(-np.abs(z))
    m = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    md = e / (1.0 + e) ** 2
    f = float(n @ (np.maximum(z, 0.0) + np.log1p(e)) - s @ z) + 0.5 * lam * float(theta @ theta)
    grad = X.T @ (n * m - s) + lam * theta
    H = (X.T * (n * md)) @ X
    H[np.diag_indices_from(H)] += lam
    return f, grad, H


def log_loss(h: History, theta, lam: float) -> float:
    X, n, s = h.design()
    return _design_loss(X, n, s, np.asarray(theta, dtype=float), lam)


def g_vector(h: History, theta, lam: float) -> np.ndarray:
    X, n, _ = h.design()
    return _design_g(X, n, np.asarray(theta, dtype=float), lam)


def hessian(h: History, theta, lam: float) -> np.ndarray:
    X, n, _ = h.design()
    return _design_hessian(X, n, np.asarray(theta, dtype=float), lam)


def reward_weighted_sum(h: History) -> np.ndarray:
    X, _, s = h.design()
    return X.T @ s


# -- maximum likelihood ------------------------------------------------------

@dataclass(frozen=True)
class MleResult:
    theta_hat: np.ndarray
    grad_norm: float
    iterations: int
    loss_value: float


def newton_minimize(fun_all, x0, tol: float = 1e-9, max_iter: int = 100, what: str = "Newton"):
    """Damped Newton with Armijo backtracking for a smooth strongly convex function.

    fun_all(x) must return (value, gradient, Hessian). Returns
    (x, value, gradient, Hessian, iterations).
    """
    x = np.array(x0, dtype=float)
    f, g, H = fun_all(x)
    for it in range(max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return x, f, g, H, it
        if it == max_iter:
            break
        p = -np.linalg.solve(H, g)
        slope = float(g @ p)
        step = 1.0
        while True:
            xn = x + step * p
            fn, gn, Hn = fun_all(xn)
            # once the Newton decrement is at rounding level the loss cannot
            # resolve a decrease, so the full step is taken
            if fn <= f + 1e-4 * step * slope or -slope < 1e-12 * max(1.0, abs(f)):
                break
            step *= 0.5
            if step < 1e-20:
                raise NonConvergenceError(f"{what}: line search failed", x, gnorm)
        x, f, g, H = xn, fn, gn, Hn
    raise NonConvergenceError(f"{what}: no convergence in {max_iter} iterations", x, gnorm)


def fit_mle(h: History, lam: float, tol: float = 1e-9, max_iter: int = 100, theta0=None) -> MleResult:
    """Unconstrained minimizer of the regularized log-loss.

    Warm-start from theta0 (e.g. the previous round's estimate) when given.
    """
    if not lam > 0:
        raise DomainError("lambda must be positive")
    X, n, s = h.design()
    x0 = np.zeros(h.dim) if theta0 is None else theta0
    theta, f, g, _, it = newton_minimize(
        lambda th: _design_all(X, n, s, th, lam), x0, tol, max_iter, "MLE")
    return MleResult(theta, float(np.linalg.norm(g)), it, f)


# -- radii -------------------------------------------------------------------

def gamma_radius(t: int, d: int, lam: float, delta: float, s_bound: float) -> float:
    if not 0 < delta <= 1:
        raise DomainError(f"delta must lie in (0, 1], got {delta}")
    root = math.sqrt(lam)
    return root * (s_bound + 0.5) + d / root * math.log(4.0 / delta * (1.0 + t / (16.0 * d * lam)))


def beta_radius(gamma: float, lam: float) -> float:
    return gamma + gamma * gamma / math.sqrt(lam)
