"""Logistic link, slope functions, arm sets and kappa quantities.

Everything here is a pure function of immutable values. Scalar helpers
accept numpy arrays and broadcast.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Union

import numpy as np

from .errors import DegenerateDirectionError, DomainError

ARM_NORM_SLACK = 1e-12


# -- link function -----------------------------------------------------------

def mu(z):
    """Logistic function, evaluated without overflow for any finite z."""
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def mu_dot(z):
    z = np.asarray(z, dtype=float)
    # 1 / (4 cosh^2(z/2)) never exceeds 1/4 after rounding
    with np.errstate(over="ignore"):
        out = 0.25 / np.cosh(0.5 * z) ** 2
    return out if out.ndim else float(out)


def mu_ddot(z):
    z = np.asarray(z, dtype=float)
    # 1 - 2 mu(z) == -tanh(z / 2), which stays accurate in both tails
    out = -np.tanh(0.5 * z) * mu_dot(z)
    return out if out.ndim else float(out)


def inv_mu_dot(z):
    """1 / mu_dot(z) = 2 + 2 cosh(z)."""
    z = np.asarray(z, dtype=float)
    out = 2.0 + 2.0 * np.cosh(z)
    return out if out.ndim else float(out)


def softplus(z):
    """log(1 + e^z), the per-round loss building block."""
    z = np.asarray(z, dtype=float)
    out = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    return out if out.ndim else float(out)


def mu_family(z: float) -> tuple[float, float, float]:
    """Return (mu, mu_dot, mu_ddot) at a finite scalar z."""
    z = float(z)
    if not math.isfinite(z):
        raise DomainError(f"logistic evaluated at non-finite z={z!r}")
    return mu(z), mu_dot(z), mu_ddot(z)


# -- slope functions ---------------------------------------------------------

ALPHA_SWITCH = 1e-8
ALPHA_TILDE_SWITCH = 1e-4


def _log_sinhc(h):
    # log(sinh(h) / h), h may be large
    h = np.abs(h)
    hs = np.clip(h, 1e-300, 20.0)
    direct = np.log(np.sinh(hs) / hs)
    hl = np.maximum(h, 20.0)
    tail = hl + np.log1p(-np.exp(-2.0 * hl)) - math.log(2.0) - np.log(hl)
    return np.where(h < 20.0, direct, tail)


def _log_cosh(u):
    u = np.abs(u)
    return u + np.log1p(np.exp(-2.0 * u)) - math.log(2.0)


def alpha_z(z1, z2):
    """Mean slope of mu between z1 and z2, i.e. (mu(z2) - mu(z1)) / (z2 - z1).

    The difference quotient is evaluated through the identity
    mu(b) - mu(a) = sinh((b-a)/2) / (2 cosh(a/2) cosh(b/2)) in log space, which
    has no cancellation for nearby arguments and no overflow in the tails.
    """
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    dz = z2 - z1
    log_val = _log_sinhc(0.5 * dz) - math.log(4.0) - _log_cosh(0.5 * z1) - _log_cosh(0.5 * z2)
    out = np.where(np.abs(dz) > ALPHA_SWITCH, np.exp(log_val), mu_dot(z1))
    return out if out.ndim else float(out)


def alpha_tilde_z(a, b):
    """Integral of (1 - v) mu_dot(a + v b) over v in [0, 1]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    # mu_dot is even, so (a, b) -> (-a, -b) leaves the integral unchanged;
    # working with a <= 0 keeps mu(a) <= 1/2 and avoids cancellation below.
    flip = a > 0
    a = np.where(flip, -a, a)
    b = np.where(flip, -b, b)
    m = mu(a)
    md = mu_dot(a)
    series = 0.5 * md + mu_ddot(a) * b / 6.0 + md * (1.0 - 6.0 * md) * b * b / 24.0
    safe_b = np.where(np.abs(b) > ALPHA_TILDE_SWITCH, b, 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        moderate = np.log1p(m * np.expm1(np.minimum(safe_b, 30.0))) - m * safe_b
        large = softplus(a + safe_b) - softplus(a) - m * safe_b
    num = np.where(safe_b <= 30.0, moderate, large)
    out = np.where(np.abs(b) > ALPHA_TILDE_SWITCH, num / (safe_b * safe_b), series)
    return out if out.ndim else float(out)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DomainError("non-finite input")


def slope_alpha(x, theta1, theta2) -> float:
    x, theta1, theta2 = (np.asarray(v, dtype=float) for v in (x, theta1, theta2))
    _check_finite(x, theta1, theta2)
    return alpha_z(x @ theta1, x @ theta2)


def slope_alpha_tilde(x, theta1, theta2) -> float:
    x, theta1, theta2 = (np.asarray(v, dtype=float) for v in (x, theta1, theta2))
    _check_finite(x, theta1, theta2)
    return alpha_tilde_z(x @ theta1, x @ (theta2 - theta1))


# -- arm sets ----------------------------------------------------------------

def check_arm(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or not np.all(np.isfinite(x)):
        raise DomainError("an arm must be a finite 1-d vector")
    if np.linalg.norm(x) > 1.0 + ARM_NORM_SLACK:
        raise DomainError(f"arm norm {np.linalg.norm(x):.6g} exceeds 1")
    return x


@lru_cache(maxsize=16)
def circle_points(resolution: int) -> np.ndarray:
    """Evenly spaced unit vectors on the circle, index k at angle 2*pi*k/resolution."""
    angles = 2.0 * np.pi * np.arange(resolution) / resolution
    pts = np.column_stack([np.cos(angles), np.sin(angles)])
    pts.setflags(write=False)
    return pts


def snap_to_circle(v, resolution: int) -> int:
    """Index of the circle grid point maximizing its inner product with v."""
    ang = math.atan2(v[1], v[0]) % (2.0 * math.pi)
    k = int(round(ang * resolution / (2.0 * math.pi))) % resolution
    # the rounding above is exact up to ties; settle them by direct comparison
    pts = circle_points(resolution)
    cands = [(k - 1) % resolution, k, (k + 1) % resolution]
    vals = [pts[j] @ v for j in cands]
    best = max(range(3), key=lambda i: (vals[i], -cands[i]))
    return cands[best]


@dataclass(frozen=True, eq=False)
class FiniteArmSet:
    arms: np.ndarray

    def __post_init__(self):
        arms = np.array(self.arms, dtype=float, ndmin=2)
        if arms.shape[0] == 0:
            raise DomainError("finite arm set must be non-empty")
        for row in arms:
            check_arm(row)
        arms.setflags(write=False)
        object.__setattr__(self, "arms", arms)

    kind = "finite"
    resolution = None

    @property
    def dim(self) -> int:
        return self.arms.shape[1]

    def candidates(self) -> np.ndarray:
        return self.arms

    def describe(self) -> str:
        rows = ";".join(",".join(f"{v:.12g}" for v in r) for r in self.arms)
        return f"finite[{rows}]"


@dataclass(frozen=True)
class _RoundArmSet:
    dim: int
    resolution: int | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise DomainError("dimension must be positive")
        if self.resolution is not None and self.resolution < 8:
            raise DomainError("discretization resolution must be at least 8")

    def candidates(self) -> np.ndarray | None:
        """Grid arms used by planners that need a finite search (d = 2 only)."""
        if self.dim == 2 and self.resolution is not None:
            return circle_points(self.resolution)
        return None

    def describe(self) -> str:
        return f"{self.kind}[d={self.dim},res={self.resolution}]"


@dataclass(frozen=True)
class UnitSphere(_RoundArmSet):
    kind = "sphere"


@dataclass(frozen=True)
class UnitBall(_RoundArmSet):
    kind = "ball"


ArmSet = Union[FiniteArmSet, UnitSphere, UnitBall]


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    theta_star: np.ndarray
    s_bound: float
    arm_set: ArmSet

    def __post_init__(self):
        theta = np.array(self.theta_star, dtype=float)
        if theta.ndim != 1 or theta.shape[0] != self.arm_set.dim:
            raise DomainError("theta_star dimension does not match the arm set")
        if not self.s_bound > 0:
            raise DomainError("s_bound must be positive")
        if np.linalg.norm(theta) > self.s_bound * (1.0 + 1e-12):
            raise DomainError(f"|theta_star| = {np.linalg.norm(theta):.6g} exceeds S = {self.s_bound}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta_star", theta)
        object.__setattr__(self, "s_bound", float(self.s_bound))

    @property
    def dim(self) -> int:
        return self.theta_star.shape[0]

    def digest(self) -> str:
        text = "|".join([
            ",".join(f"{v:.12g}" for v in self.theta_star),
            f"{self.s_bound:.12g}",
            self.arm_set.describe(),
        ])
        return hashlib.sha256(text.encode()).hexdigest()[:16]


# -- geometry helpers --------------------------------------------------------

class BestArm(NamedTuple):
    arm: np.ndarray
    value: float
    index: int  # -1 when the maximizer is a continuous closed form


def best_arm(arm_set: ArmSet, theta) -> BestArm:
    theta = np.asarray(theta, dtype=float)
    if arm_set.kind == "finite":
        vals = arm_set.arms @ theta
        i = int(np.argmax(vals))  # first maximum, i.e. lowest index on ties
        return BestArm(arm_set.arms[i], float(vals[i]), i)
    norm = float(np.linalg.norm(theta))
    if norm == 0.0:
        raise DegenerateDirectionError("best arm over a sphere/ball is undefined for theta = 0")
    return BestArm(theta / norm, norm, -1)


@dataclass(frozen=True)
class KappaSummary:
    kappa_star: float
    kappa_x: float
    kappa_global: float


def kappa_summary(inst: ProblemInstance) -> KappaSummary:
    star = best_arm(inst.arm_set, inst.theta_star).value
    if inst.arm_set.kind == "finite":
        z = inst.arm_set.arms @ inst.theta_star
        kx = float(np.max(inv_mu_dot(z)))
        kg = float(np.max(inv_mu_dot(inst.s_bound * np.linalg.norm(inst.arm_set.arms, axis=1))))
    else:
        kx = inv_mu_dot(np.linalg.norm(inst.theta_star))
        kg = inv_mu_dot(inst.s_bound)
    return KappaSummary(inv_mu_dot(star), kx, kg)


@dataclass(frozen=True)
class DetrimentalSet:
    """Arms with a large gap and almost no reward variance under theta_star."""

    theta_star: np.ndarray
    best_value: float
    kappa_star: float
    members: tuple[int, ...] | None  # explicit indices for finite arm sets

    @property
    def uses_gap_rule(self) -> bool:
        return self.best_value > 0

    def mask(self, arms) -> np.ndarray:
        z = np.atleast_2d(np.asarray(arms, dtype=float)) @ self.theta_star
        if self.uses_gap_rule:
            return z <= -1.0
        return mu_dot(z) <= 1.0 / (2.0 * self.kappa_star)

    def __contains__(self, x) -> bool:
        return bool(self.mask(x)[0])


def detrimental_set(inst: ProblemInstance) -> DetrimentalSet:
    best = best_arm(inst.arm_set, inst.theta_star).value
    ds = DetrimentalSet(inst.theta_star, best, inv_mu_dot(best), None)
    if inst.arm_set.kind == "finite":
        idx = tuple(int(i) for i in np.flatnonzero(ds.mask(inst.arm_set.arms)))
        ds = DetrimentalSet(inst.theta_star, best, ds.kappa_star, idx)
    return ds
