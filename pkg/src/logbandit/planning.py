"""Optimistic planners over the relaxed confidence set, plus oracles and a baseline.

The core subproblem is max x.theta over E = {f(theta) <= c} intersected with the
ball ||theta|| <= S, where f is the regularized log-loss and c its minimum plus
beta^2. It is solved through its optimality conditions rather than by a
first-order ascent:

* if S x/||x|| lies in E it is the answer;
* otherwise the loss-only optimum is found by following the path
  theta(tau) = argmin f - tau x.theta until f reaches c; if that point is
  inside the ball it is the answer;
* otherwise both constraints are active. In d = 2 the answer is the feasible
  point of the circle closest in angle to x (certified by a KKT check); in
  general the ball constraint is dualized and its multiplier found by a
  monotone 1-D search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .confidence import ConfidenceState, in_C_many, in_E_many, within
from .errors import (
    DomainError, EmptyConfidenceSetError, NonConvergenceError, PlanningError,
    UnsupportedDimensionError,
)
from .estimation import History, _design_all, _design_loss, _design_loss_many, newton_minimize
from .logistic import FiniteArmSet, circle_points, mu

_GAP_RTOL = 1e-11


class SolverReport(NamedTuple):
    iterations: int
    feasibility_residual: float
    value_gap: float


@dataclass(frozen=True, eq=False)
class PlanResult:
    arm: np.ndarray
    theta_tilde: np.ndarray
    optimistic_value: float
    solver_report: SolverReport
    arm_index: int = -1


@dataclass(frozen=True)
class SolverOpts:
    tol: float = 1e-7
    max_iter: int = 500
    restarts: int = 4

    def __post_init__(self):
        if not self.tol > 0 or self.max_iter < 1 or self.restarts < 1:
            raise DomainError("solver options need tol > 0, max_iter >= 1, restarts >= 1")


class _Subproblem:
    """max x.theta over E_t intersected with the S-ball, for one round's state."""

    def __init__(self, h: History, st: ConfidenceState, opts: SolverOpts):
        self.X, self.n, self.s = h.design()
        self.dim = h.dim
        self.lam = st.lam
        self.S = st.s_bound
        self.theta_hat = np.asarray(st.theta_hat, dtype=float)
        self.f_hat = st.loss_at_hat
        self.b2 = st.beta ** 2
        self.c = st.loss_at_hat + self.b2
        self.opts = opts
        self.iterations = 0
        self._centre: np.ndarray | None = None

    # -- small helpers -------------------------------------------------------

    def loss(self, theta) -> float:
        return _design_loss(self.X, self.n, self.s, theta, self.lam)

    def loss_many(self, thetas) -> np.ndarray:
        return _design_loss_many(self.X, self.n, self.s, thetas, self.lam)

    def feasible(self, theta) -> bool:
        ok_ball = within(float(np.linalg.norm(theta)), self.S)
        return ok_ball and within(self.loss(theta) - self.f_hat, self.b2)

    def _tilted_min(self, weight, x, rho, theta0):
        """argmin f + weight (rho/2 ||theta||^2 - x.theta); returns (theta, f, H_f)."""
        X, n, s, lam = self.X, self.n, self.s, self.lam

        eye = np.eye(self.dim)

        def fun(th):
            f, g, H = _design_all(X, n, s, th, lam)
            return (f + weight * (0.5 * rho * float(th @ th) - float(x @ th)),
                    g + weight * (rho * th - x),
                    H + (weight * rho) * eye)

        scale = max(1.0, weight * float(np.linalg.norm(x)))
        theta, fm, _, Hm, it = newton_minimize(fun, theta0, 1e-10 * scale, self.opts.max_iter, "path")
        self.iterations += it
        f = fm - weight * (0.5 * rho * float(theta @ theta) - float(x @ theta))
        return theta, f, Hm - (weight * rho) * eye

    # -- centre of the feasible set -----------------------------------------

    def centre(self) -> np.ndarray:
        """A point of E intersected with the ball (theta_hat when it is inside)."""
        if self._centre is not None:
            return self._centre
        if np.linalg.norm(self.theta_hat) <= self.S:
            self._centre = self.theta_hat
            return self._centre
        # argmin f over the ball: theta(rho) = argmin f + rho/2 ||theta||^2
        zero = np.zeros(self.dim)
        state = {"theta": self.theta_hat.copy()}

        def excess(log_rho):
            th, _, _ = self._tilted_min(1.0, zero, math.exp(log_rho), state["theta"])
            state["theta"] = th
            return float(np.linalg.norm(th)) - self.S

        lo, hi = -30.0, 0.0
        while excess(hi) > 0:
            lo, hi = hi, hi + 5.0
            if hi > 60:
                raise NonConvergenceError("ball centre: bracket not found", state["theta"])
        root = brentq(excess, lo, hi, xtol=1e-13, rtol=1e-15)
        th, _, _ = self._tilted_min(1.0, zero, math.exp(root), state["theta"])
        if np.linalg.norm(th) > self.S:
            th = th * (self.S / np.linalg.norm(th))
        if self.loss(th) - self.f_hat > self.b2 * (1.0 + 1e-9) + 1e-9:
            raise EmptyConfidenceSetError("relaxed confidence set misses the parameter ball")
        self._centre = th
        return th

    def sphere_mle(self) -> np.ndarray | None:
        """argmin of f over the sphere ||theta|| = S, or None in the degenerate case.

        For rho < lam the function f - rho/2 ||theta||^2 is strongly convex, and
        its minimizer at the rho where the norm equals S minimizes f on the sphere.
        """
        nrm = float(np.linalg.norm(self.theta_hat))
        if nrm >= self.S:
            return self.centre()
        if nrm == 0.0:
            return None
        state = {"theta": self.theta_hat.copy()}
        zero = np.zeros(self.dim)

        def excess(rho):
            th, _, _ = self._tilted_min(1.0, zero, -rho, state["theta"])
            state["theta"] = th
            return float(np.linalg.norm(th)) - self.S

        lo, hi = 0.0, None
        for k in range(1, 60):
            rho = self.lam * (1.0 - 2.0 ** -k)
            if excess(rho) > 0:
                hi = rho
                break
            lo = rho
        if hi is None:
            return None
        state["theta"] = self.theta_hat.copy()
        root = brentq(excess, lo, hi, xtol=1e-14, rtol=1e-15)
        th, _, _ = self._tilted_min(1.0, zero, -root, state["theta"])
        return th * (self.S / float(np.linalg.norm(th)))

    # -- stage 1: loss constraint only ---------------------------------------

    def loss_only(self, x) -> np.ndarray:
        """argmax x.theta subject to f(theta) <= c (no ball constraint)."""
        b2, tol = self.b2, _GAP_RTOL * max(1.0, self.b2)
        theta = self.theta_hat.copy()
        _, _, H = _design_all(self.X, self.n, self.s, theta, self.lam)
        v = np.linalg.solve(H, x)
        tau = math.sqrt(2.0 * b2 / float(x @ v))
        theta = theta + tau * v
        lo, hi = 0.0, math.inf
        for _ in range(self.opts.max_iter):
            theta, f, H = self._tilted_min(tau, x, 0.0, theta)
            q = f - self.f_hat
            if abs(q - b2) <= tol:
                return theta
            if q < b2:
                lo = tau
            else:
                hi = tau
            if hi < math.inf and hi - lo <= 1e-15 * hi:
                return theta if q <= b2 else self._pull_in(theta)
            v = np.linalg.solve(H, x)
            xv = float(x @ v)
            # Newton on sqrt(2 q(tau)) - sqrt(2) beta, which is nearly linear in tau
            root_q = math.sqrt(2.0 * max(q, 1e-300))
            new = tau - (root_q - math.sqrt(2.0 * b2)) * root_q / (tau * xv)
            if not lo < new < hi:
                new = 0.5 * (lo + hi) if hi < math.inf else 2.0 * tau
            theta = theta + (new - tau) * v
            tau = new
        raise NonConvergenceError("loss-only stage did not converge", theta)

    def _pull_in(self, theta, anchor=None):
        """Bisect toward a feasible anchor (theta_hat by default) until the loss level holds."""
        anchor = self.theta_hat if anchor is None else anchor
        a, b = 0.0, 1.0
        for _ in range(80):
            m = 0.5 * (a + b)
            if self.loss(anchor + m * (theta - anchor)) - self.f_hat <= self.b2:
                a = m
            else:
                b = m
        return anchor + a * (theta - anchor)

    # -- stage 2: both constraints active ------------------------------------

    def _circle(self, x):
        """d = 2: feasible circle point closest in angle to x, or None if uncertified."""
        S, c = self.S, self.c
        phi_x = math.atan2(x[1], x[0])
        m = 720
        steps = np.arange(1, m // 2 + 1)
        ang = np.concatenate([phi_x + math.pi * steps / (m // 2), phi_x - math.pi * steps / (m // 2)])
        pts = S * np.column_stack([np.cos(ang), np.sin(ang)])
        ok = self.loss_many(pts) <= c
        if not ok.any():
            return None
        dist = np.concatenate([steps, steps]).astype(float)
        dist[~ok] = np.inf
        k = int(np.argmin(dist))
        j = int(steps[k % steps.size])
        sign = 1.0 if k < steps.size else -1.0

        def gap(a):
            return self.loss(S * np.array([math.cos(a), math.sin(a)])) - c

        a_in = phi_x + sign * math.pi * j / (m // 2)
        a_out = phi_x + sign * math.pi * (j - 1) / (m // 2)
        a = brentq(gap, a_in, a_out, xtol=1e-15, rtol=1e-15)
        # keep the endpoint on the feasible side
        if gap(a) > 0:
            a = a_in + (a - a_in) * (1 - 1e-12)
        theta = S * np.array([math.cos(a), math.sin(a)])
        _, g, _ = _design_all(self.X, self.n, self.s, theta, self.lam)
        # KKT: x = u g + w theta with u, w >= 0 certifies a global maximum
        try:
            u, w = np.linalg.solve(np.column_stack([g, theta]), x)
        except np.linalg.LinAlgError:
            return None
        nx = float(np.linalg.norm(x))
        if u < -1e-9 * nx / float(np.linalg.norm(g)) or w < -1e-9 * nx / S:
            return None
        return theta

    def _dual_ball(self, x):
        """General d: dualize the ball constraint and search its multiplier."""
        S, c = self.S, self.c
        state = {"theta": self.centre().copy()}

        def inner(rho):
            u = x / rho
            if self.loss(u) <= c:
                return u
            theta0 = state["theta"]

            def level(log_w):
                th, f, _ = self._tilted_min(math.exp(log_w), x, rho, state["theta"])
                state["theta"] = th
                return f - c

            lo, hi = -5.0, 5.0
            while level(lo) > 0:
                hi, lo = lo, lo - 10.0
                if lo < -200:
                    raise NonConvergenceError("dual ball: inner bracket", theta0)
            while level(hi) < 0:
                lo, hi = hi, hi + 10.0
                if hi > 200:
                    raise NonConvergenceError("dual ball: inner bracket", theta0)
            r = brentq(level, lo, hi, xtol=1e-12, rtol=1e-15)
            th, f, _ = self._tilted_min(math.exp(r), x, rho, state["theta"])
            if f > c:
                th = self._pull_in(th, self.centre())
            state["theta"] = th
            return th

        def excess(log_rho):
            return float(np.linalg.norm(inner(math.exp(log_rho)))) - S

        lo, hi = -3.0, 3.0
        while excess(lo) < 0:
            hi, lo = lo, lo - 6.0
            if lo < -80:
                raise NonConvergenceError("dual ball: outer bracket", state["theta"])
        while excess(hi) > 0:
            lo, hi = hi, hi + 6.0
            if hi > 80:
                raise NonConvergenceError("dual ball: outer bracket", state["theta"])
        r = brentq(excess, lo, hi, xtol=1e-13, rtol=1e-15)
        th = inner(math.exp(r))
        nrm = float(np.linalg.norm(th))
        if nrm > S:
            th = self._pull_in(th * (S / nrm), self.centre())
        return th

    # -- driver --------------------------------------------------------------

    def maximize(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        nx = float(np.linalg.norm(x))
        if nx == 0.0:
            return self.centre()
        top = self.S * x / nx
        if self.loss(top) - self.f_hat <= self.b2:
            return top
        theta = self.loss_only(x)
        if np.linalg.norm(theta) <= self.S:
            return theta
        self.centre()
        if self.dim == 2:
            th = self._circle(x)
            if th is not None:
                return th
        return self._dual_ball(x)


def _report(sub: _Subproblem, theta, value_gap=0.0) -> SolverReport:
    gap = sub.loss(theta) - sub.f_hat - sub.b2
    resid = max(0.0, gap, float(np.linalg.norm(theta)) - sub.S)
    return SolverReport(sub.iterations, resid, value_gap)


def maximize_linear_over_E(x, h: History, st: ConfidenceState, opts: SolverOpts | None = None) -> np.ndarray:
    """argmax of x.theta over E_t intersected with the parameter ball."""
    return _Subproblem(h, st, opts or SolverOpts()).maximize(x)


def plan_ofulog_r(h: History, st: ConfidenceState, arm_set: FiniteArmSet,
                  opts: SolverOpts | None = None) -> PlanResult:
    """Solve the subproblem for every arm and keep the best (lowest index on ties)."""
    sub = _Subproblem(h, st, opts or SolverOpts())
    best = None
    for i, arm in enumerate(arm_set.arms):
        try:
            theta = sub.maximize(arm)
        except (NonConvergenceError, EmptyConfidenceSetError) as exc:
            raise PlanningError(f"arm {i}: {exc}", arm_index=i) from exc
        value = float(arm @ theta)
        if best is None or value > best[0]:
            best = (value, i, theta)
    value, i, theta = best
    return PlanResult(arm_set.arms[i].copy(), theta, value, _report(sub, theta), i)


def _start_directions(theta_hat: np.ndarray, d: int, count: int) -> list[np.ndarray]:
    """theta_hat direction, its opposite, then the signed axes."""
    dirs = []
    nrm = float(np.linalg.norm(theta_hat))
    if nrm > 0:
        u = theta_hat / nrm
        dirs += [u, -u]
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        dirs += [e, -e]
    return dirs[:count]


def plan_ball(h: History, st: ConfidenceState, d: int, opts: SolverOpts | None = None,
              resolution: int | None = None) -> PlanResult:
    """Joint planning for unit ball/sphere arms by alternating maximization.

    With resolution set (d = 2 only) arms are restricted to that many equally
    spaced circle points, which keeps the set of played arms finite.
    """
    opts = opts or SolverOpts()
    sub = _Subproblem(h, st, opts)
    S = sub.S
    if resolution is not None:
        if d != 2:
            raise UnsupportedDimensionError("discretized ball planning needs d = 2")
        return _plan_circle_grid(sub, circle_points(resolution), opts)

    # value S is reached exactly when some sphere point lies in E; among those
    # the least-loss one is played
    top = sub.sphere_mle()
    if top is None and not np.any(sub.theta_hat):
        top = S * np.eye(d)[0]
    if top is not None and sub.loss(top) - sub.f_hat <= sub.b2:
        return PlanResult(top / S, top, S, _report(sub, top))

    best = None
    for start in _start_directions(sub.theta_hat, d, opts.restarts) or [np.eye(d)[0]]:
        x = start
        theta = sub.maximize(x)
        value = float(x @ theta)
        last_gain = 0.0
        for _ in range(opts.max_iter):
            nrm = float(np.linalg.norm(theta))
            if nrm <= 0 or nrm - value <= opts.tol * (1.0 + abs(value)):
                break
            x = theta / nrm
            theta = sub.maximize(x)
            new = float(x @ theta)
            assert new >= value - 1e-9 * (1.0 + abs(value)), "alternating value decreased"
            last_gain, value = new - value, new
        if best is None or value > best[0]:
            best = (value, x.copy(), theta, last_gain)
        if value >= S * (1.0 - 1e-12):
            break
    value, x, theta, gain = best
    return PlanResult(x, theta, value, _report(sub, theta, gain))


def _plan_circle_grid(sub: _Subproblem, G: np.ndarray, opts: SolverOpts) -> PlanResult:
    S = sub.S
    gaps = sub.loss_many(S * G) - sub.f_hat
    ok = gaps <= sub.b2
    if ok.any():
        # every feasible grid direction reaches the maximal value S; among them
        # play the least-loss one (lowest index on ties)
        masked = np.where(ok, gaps, np.inf)
        # losses equal up to rounding count as ties
        j = int(np.flatnonzero(masked <= masked.min() + 1e-12 * max(1.0, abs(sub.f_hat)))[0])
        theta = S * G[j]
        return PlanResult(G[j].copy(), theta, S, _report(sub, theta), j)

    cache: dict[int, tuple[float, np.ndarray]] = {}
    m = G.shape[0]

    def value_of(j):
        if j not in cache:
            th = sub.maximize(G[j])
            cache[j] = (float(G[j] @ th), th)
        return cache[j]

    best = None
    for start in _start_directions(sub.theta_hat, 2, opts.restarts) or [np.eye(2)[0]]:
        j = int(np.argmax(G @ start))
        value, theta = value_of(j)
        for _ in range(opts.max_iter):
            # alternate: best grid arm for the current theta, then refit theta
            k = int(np.argmax(G @ theta))
            cand = [k, (j - 1) % m, (j + 1) % m]
            moved = False
            for c in cand:
                v, th = value_of(c)
                if v > value + 1e-15 * (1.0 + abs(value)):
                    j, value, theta, moved = c, v, th, True
                    break
            if not moved:
                break
        if best is None or value > best[0]:
            best = (value, j, theta)
    value, j, theta = best
    return PlanResult(G[j].copy(), theta, value, _report(sub, theta), j)


def angular_sweep(h: History, st: ConfidenceState, resolution: int = 720,
                  opts: SolverOpts | None = None) -> PlanResult:
    """Reference planner for d = 2: solve the subproblem at every circle point."""
    if h.dim != 2:
        raise UnsupportedDimensionError("angular sweep needs d = 2")
    sub = _Subproblem(h, st, opts or SolverOpts())
    G = circle_points(resolution)
    best = None
    for j, x in enumerate(G):
        th = sub.maximize(x)
        v = float(x @ th)
        if best is None or v > best[0]:
            best = (v, j, th)
    v, j, th = best
    return PlanResult(G[j].copy(), th, v, _report(sub, th), j)


def grid_thetas(d: int, s_bound: float, resolution: int) -> np.ndarray:
    axis = np.linspace(-s_bound, s_bound, resolution)
    if d == 1:
        return axis[:, None]
    a, b = np.meshgrid(axis, axis, indexing="ij")
    return np.column_stack([a.ravel(), b.ravel()])


def grid_slack(s_bound: float, resolution: int, d: int = 2) -> float:
    """Lipschitz slack of the grid oracle for unit arms: twice the cell diagonal."""
    cell = 2.0 * s_bound / (resolution - 1)
    return 2.0 * cell * math.sqrt(d)


def plan_grid_oracle(h: History, st: ConfidenceState, arm_set, set_choice: str = "E",
                     resolution: int = 400) -> PlanResult:
    """Exhaustive search over a resolution^d grid of [-S, S]^d (d <= 2)."""
    if h.dim > 2:
        raise UnsupportedDimensionError("grid oracle supports d <= 2 only")
    if set_choice not in ("C", "E"):
        raise DomainError("set_choice must be 'C' or 'E'")
    arms = arm_set.candidates() if not isinstance(arm_set, np.ndarray) else arm_set
    if arms is None:
        arms = circle_points(720)
    thetas = grid_thetas(h.dim, st.s_bound, resolution)
    thetas = thetas[np.linalg.norm(thetas, axis=1) <= st.s_bound * (1 + 1e-9)]
    test = in_C_many if set_choice == "C" else in_E_many
    keep = np.concatenate([test(chunk, h, st) for chunk in np.array_split(thetas, max(1, len(thetas) // 20000))])
    feas = thetas[keep]
    if feas.shape[0] == 0:
        raise EmptyConfidenceSetError("no grid point passes the membership test")
    vals = arms @ feas.T
    top = float(vals.max())
    # value ties go to the least-loss parameter, then the lowest arm index
    rows, cols = np.nonzero(vals >= top - 1e-12 * (1.0 + abs(top)))
    X, n, s = h.design()
    losses = _design_loss_many(X, n, s, feas[cols], st.lam)
    pick = np.lexsort((rows, losses))[0]
    i, k = int(rows[pick]), int(cols[pick])
    theta = feas[k]
    return PlanResult(arms[i].copy(), theta.copy(), float(vals[i, k]), SolverReport(0, 0.0, grid_slack(st.s_bound, resolution, h.dim)), i)


def glm_ucb_scores(h: History, st: ConfidenceState, arms: np.ndarray, kappa: float) -> np.ndarray:
    """mu(x.theta_hat) + kappa gamma ||x||_{V^-1}, V the regularized design matrix."""
    X, n, _ = h.design()
    V = (X.T * n) @ X + st.lam * np.eye(h.dim)
    L = np.linalg.cholesky(V)
    w = np.linalg.solve(L, arms.T)
    bonus = np.sqrt(np.einsum("ij,ij->j", w, w))
    return mu(arms @ st.theta_hat) + kappa * st.gamma * bonus


def baseline_glm_ucb(h: History, st: ConfidenceState, arm_set: FiniteArmSet, kappa: float) -> np.ndarray:
    if kappa < 4:
        raise DomainError("kappa must be at least 4")
    arms = arm_set.arms
    return arms[int(np.argmax(glm_ucb_scores(h, st, arms, kappa)))].copy()
