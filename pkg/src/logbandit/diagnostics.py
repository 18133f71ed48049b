"""Fuzzed property suites for the analytic inequalities behind the regret analysis.

Each suite draws its cases from a seeded generator, evaluates both sides of
an inequality in vectorized form and counts violations beyond a small slack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimation import RegSchedule, lambda_at
from .logistic import alpha_tilde_z, alpha_z, mu_dot

SLACK = 1e-8


@dataclass(frozen=True)
class SuiteResult:
    name: str
    cases: int
    violations: int
    max_excess: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _tally(name: str, lhs, rhs, slack: float = SLACK) -> SuiteResult:
    """Count cases with lhs > rhs beyond a relative slack."""
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    excess = (lhs - rhs) / np.maximum(1.0, np.abs(rhs))
    bad = ~(excess <= slack)  # NaN counts as a violation
    worst = float(np.nanmax(excess)) if excess.size else 0.0
    return SuiteResult(name, int(lhs.size), int(bad.sum()), worst)


def _z_pairs(rng: np.random.Generator, n: int):
    """Mix of wide and nearly coincident logit pairs."""
    z1 = rng.uniform(-25.0, 25.0, n)
    width = np.where(rng.random(n) < 0.3, 10.0 ** rng.uniform(-10, -1, n), rng.uniform(0, 30, n))
    z2 = z1 + width * rng.choice([-1.0, 1.0], n)
    return z1, z2


def self_concordance_slope(rng, n: int) -> SuiteResult:
    """alpha(z1, z2) >= mu_dot(z) / (1 + |z1 - z2|) for z in {z1, z2}."""
    z1, z2 = _z_pairs(rng, n)
    a = alpha_z(z1, z2)
    gap = np.abs(z1 - z2)
    floor = np.maximum(mu_dot(z1), mu_dot(z2)) / (1.0 + gap)
    # compare on a relative scale: both sides may be ~1e-11
    return _tally("self_concordance_slope", floor / a, np.ones(n))


def self_concordance_tilde(rng, n: int) -> SuiteResult:
    """alpha_tilde(z1, z2) >= mu_dot(z1) / (2 + |z1 - z2|)."""
    z1, z2 = _z_pairs(rng, n)
    a = alpha_tilde_z(z1, z2 - z1)
    floor = mu_dot(z1) / (2.0 + np.abs(z1 - z2))
    return _tally("self_concordance_tilde", floor / a, np.ones(n))


def self_concordance_ratio(rng, n: int) -> SuiteResult:
    """mu_dot(z2) exp(-|dz|) <= mu_dot(z1) <= mu_dot(z2) exp(|dz|)."""
    z1, z2 = _z_pairs(rng, n)
    gap = np.abs(z1 - z2)
    # log form keeps the check meaningful in the far tails
    l1 = np.log(mu_dot(z1))
    l2 = np.log(mu_dot(z2))
    excess = np.maximum(l2 - gap - l1, l1 - l2 - gap)
    return _tally("self_concordance_ratio", excess, np.zeros(n))


def exp_ineq_lhs(x):
    """(1/x)(1 + (exp(-x) - 1)/x), with a series for small x."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-3
    xs = np.where(small, 1.0, x)
    direct = (1.0 + np.expm1(-xs) / xs) / xs
    series = 0.5 - x / 6.0 + x * x / 24.0 - x ** 3 / 120.0
    return np.where(small, series, direct)


def exp_inequality(rng, n: int) -> SuiteResult:
    """(1/x)(1 + (e^-x - 1)/x) >= 1/(2 + x) on a log-spaced grid of [1e-8, 1e3]."""
    x = np.logspace(-8, 3, n)
    return _tally("exp_inequality", 1.0 / (2.0 + x), exp_ineq_lhs(x))


def polynomial_inequality(rng, n: int) -> SuiteResult:
    """x^2 <= b x + c with b, c >= 0 implies x <= b + sqrt(c)."""
    b = rng.exponential(3.0, n) * (rng.random(n) > 0.05)
    c = rng.exponential(3.0, n) * (rng.random(n) > 0.05)
    root = 0.5 * (b + np.sqrt(b * b + 4.0 * c))
    x = root * rng.random(n) ** 0.2
    return _tally("polynomial_inequality", x, b + np.sqrt(c))


def _random_arms(rng, count: int, length: int, d: int, x_bound: np.ndarray):
    v = rng.normal(size=(count, length, d))
    v /= np.linalg.norm(v, axis=2, keepdims=True)
    radius = x_bound[:, None] * rng.random((count, length)) ** 0.3
    return v * radius[..., None]


def determinant_trace(rng, n: int, length: int = 50) -> SuiteResult:
    """det(V_t) <= (lam + (t - 1) X^2 / d)^d, V_t = lam I + sum_{s<t} x_s x_s'."""
    count = max(1, n // length)
    lhs, rhs = [], []
    for d in (1, 2, 3, 5):
        m = count // 4 + (1 if d == 1 else 0) * (count % 4)
        lam = rng.uniform(0.5, 5.0, m)
        xb = rng.uniform(0.2, 2.0, m)
        x = _random_arms(rng, m, length, d, xb)
        outer = np.cumsum(np.einsum("mti,mtj->mtij", x, x), axis=1)
        # V_t uses the t - 1 first arms: shift by one round
        V = np.concatenate([np.zeros((m, 1, d, d)), outer[:, :-1]], axis=1) + lam[:, None, None, None] * np.eye(d)
        _, logdet = np.linalg.slogdet(V)
        t = np.arange(1, length + 1)
        bound = d * np.log(lam[:, None] + (t[None, :] - 1) * xb[:, None] ** 2 / d)
        lhs.append(logdet.ravel())
        rhs.append(bound.ravel())
    return _tally("determinant_trace", np.concatenate(lhs), np.concatenate(rhs))


def potential_terms(arms: np.ndarray, lams: np.ndarray) -> np.ndarray:
    """||x_t||^2 in the V_t^{-1} norm, V_t = sum_{s<t} x_s x_s' + lam_t I (batched over axis 0)."""
    m, T, d = arms.shape
    A = np.zeros((m, d, d))
    out = np.empty((m, T))
    eye = np.eye(d)
    for t in range(T):
        x = arms[:, t]
        V = A + lams[:, t, None, None] * eye
        sol = np.linalg.solve(V, x[..., None])[..., 0]
        out[:, t] = np.einsum("mi,mi->m", x, sol)
        A = A + np.einsum("mi,mj->mij", x, x)
    return out


def elliptical_potential_check(arms, sched: RegSchedule, x_bound: float) -> tuple[float, float]:
    """(sum_t ||x_t||^2_{V_t^-1}, 2 d (1 + X^2) log(lam_T + T X^2 / d))."""
    arms = np.atleast_2d(np.asarray(arms, dtype=float))
    T, d = arms.shape
    if T == 0:
        return 0.0, 0.0
    lams = np.array([lambda_at(sched, t) for t in range(1, T + 1)])
    lhs = float(potential_terms(arms[None], lams[None])[0].sum())
    rhs = 2.0 * d * (1.0 + x_bound ** 2) * math.log(lams[-1] + T * x_bound ** 2 / d)
    return lhs, rhs


def elliptical_potential(rng, n: int, length: int = 40) -> SuiteResult:
    """Every prefix of random arm sequences under growing regularization."""
    count = max(1, n // length)
    lhs, rhs = [], []
    for d in (1, 2, 3, 5):
        m = count // 4 + (1 if d == 1 else 0) * (count % 4)
        xb = rng.uniform(0.1, 1.0, m)
        x = _random_arms(rng, m, length, d, xb)
        scale = rng.uniform(0.0, 3.0, m)
        t = np.arange(1, length + 1)
        lams = np.maximum(1.0, scale[:, None] * np.log(t)[None, :])
        terms = potential_terms(x, lams)
        lhs.append(np.cumsum(terms, axis=1).ravel())
        rhs.append((2.0 * d * (1.0 + xb[:, None] ** 2) * np.log(lams + t * xb[:, None] ** 2 / d)).ravel())
    return _tally("elliptical_potential", np.concatenate(lhs), np.concatenate(rhs))


SUITES = {
    "self_concordance_slope": self_concordance_slope,
    "self_concordance_tilde": self_concordance_tilde,
    "self_concordance_ratio": self_concordance_ratio,
    "exp_inequality": exp_inequality,
    "polynomial_inequality": polynomial_inequality,
    "determinant_trace": determinant_trace,
    "elliptical_potential": elliptical_potential,
}


def run_lemma_suites(cases: int = 100_000, seed: int = 0) -> list[SuiteResult]:
    out = []
    for k, (name, fn) in enumerate(SUITES.items()):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, k])))
        out.append(fn(rng, cases))
    return out
