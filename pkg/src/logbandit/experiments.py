"""Experiment drivers: coverage, regret scaling, transitory phase, lower bound, lemmas.

Replication k always runs with seed base_seed + k and owns its generators,
History and caches, so results do not depend on how replications are spread
over worker processes.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .confidence import build_state, c_statistic, in_E
from .diagnostics import run_lemma_suites
from .errors import DomainError
from .estimation import History, RegSchedule
from .logistic import (
    FiniteArmSet, ProblemInstance, UnitBall, UnitSphere, circle_points, inv_mu_dot,
    kappa_summary, mu,
)
from .planning import SolverOpts
from .simulation import (
    ConstantArm, EpsilonGreedy, GlmUcbKappa, OFULogGrid, OFULogR, Oracle, RoundRobin, TrajectoryLog,
    detrimental_count_series, exact_kl_sum, kl_traj_bound, make_rng, mean_se, playable_best, run_episode,
    step,
)

KINDS = ("run", "coverage", "scaling", "transitory", "lowerbound", "verify-lemmas")
POLICIES = ("ofulog_r", "ofulog_grid", "glm_ucb", "eps_greedy", "oracle")
ARM_SETS = ("finite", "sphere", "ball")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    dim: int = 2
    horizon: int = 1000
    replications: int = 1
    seed: int = 0
    delta: float = 0.1
    s_bound: float | None = None
    lambda_floor: float = 1.0
    theta_star: tuple | None = None
    arm_set: str = "ball"
    resolution: int | None = 720
    arms: tuple | None = None
    policy: str = "ofulog_r"
    policy_epsilon: float = 0.1
    policy_kappa: float | None = None
    norms: tuple = (1.0, 2.0, 3.0)
    angle_deg: float = 60.0
    baseline: bool = True
    checkpoint: int | None = None
    packing_epsilon: float | None = None
    lemma_cases: int = 100_000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown experiment kind {self.kind!r}")
        if self.horizon < 1 or self.replications < 1 or self.dim < 1:
            raise DomainError("horizon, replications and dimension must be at least 1")
        if not 0 < self.delta <= 1:
            raise DomainError("delta must lie in (0, 1]")


@dataclass
class ExperimentResult:
    kind: str
    summary: dict
    checks: dict
    logs: list = field(default_factory=list)  # (file stem, TrajectoryLog)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def replicate(fn, jobs: list, threads: int = 1) -> list:
    """Map fn over jobs, in order; threads = 0 uses every core."""
    workers = (os.cpu_count() or 1) if threads == 0 else threads
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


# -- instances and policies --------------------------------------------------

def default_theta(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.theta_star is not None:
        return np.array(cfg.theta_star, dtype=float)
    theta = np.zeros(cfg.dim)
    theta[0] = 1.0
    return theta


def default_arms(d: int) -> np.ndarray:
    """Logging dictionary: 8 circle points in d = 2, the signed axes otherwise."""
    if d == 2:
        return np.array(circle_points(8))
    return np.vstack([np.eye(d), -np.eye(d)])


def make_arm_set(cfg: ExperimentConfig):
    if cfg.arm_set == "finite":
        arms = np.array(cfg.arms, dtype=float) if cfg.arms is not None else default_arms(cfg.dim)
        return FiniteArmSet(arms)
    res = cfg.resolution if cfg.dim == 2 else None
    return UnitBall(cfg.dim, res) if cfg.arm_set == "ball" else UnitSphere(cfg.dim, res)


def make_instance(cfg: ExperimentConfig, theta=None, arm_set=None) -> ProblemInstance:
    theta = default_theta(cfg) if theta is None else np.asarray(theta, dtype=float)
    s = cfg.s_bound if cfg.s_bound is not None else max(1.0, float(np.linalg.norm(theta)))
    return ProblemInstance(theta, s, arm_set or make_arm_set(cfg))


def make_policy(cfg: ExperimentConfig, name: str | None = None):
    name = name or cfg.policy
    if name == "ofulog_r":
        return OFULogR(cfg.delta, cfg.lambda_floor, SolverOpts())
    if name == "ofulog_grid":
        return OFULogGrid(cfg.delta, cfg.lambda_floor)
    if name == "glm_ucb":
        return GlmUcbKappa(cfg.delta, cfg.lambda_floor, cfg.policy_kappa)
    if name == "eps_greedy":
        return EpsilonGreedy(cfg.delta, cfg.lambda_floor, cfg.policy_epsilon)
    if name == "oracle":
        return Oracle()
    raise DomainError(f"unknown policy {name!r}")


def _episode_job(job) -> TrajectoryLog:
    cfg, theta, arm_set, s_bound, policy, seed, diagnostics = job
    inst = ProblemInstance(np.asarray(theta), s_bound, arm_set)
    pol = policy if not isinstance(policy, str) else make_policy(cfg, policy)
    return run_episode(pol, inst, cfg.horizon, seed, diagnostics)


def _run_reps(cfg, inst, policy, threads, diagnostics=True, seeds=None):
    seeds = seeds if seeds is not None else [cfg.seed + k for k in range(cfg.replications)]
    jobs = [(cfg, inst.theta_star, inst.arm_set, inst.s_bound, policy, s, diagnostics) for s in seeds]
    return replicate(_episode_job, jobs, threads)


# -- shared log summaries ----------------------------------------------------

def diagnostic_violations(logs: list[TrajectoryLog], optimism_tol: float = 1e-6) -> dict:
    """Optimism and deviation failures on rounds where theta_star lies in E_t."""
    checked = opt_bad = dev_bad = relaxed_bad = 0
    worst_dev = 0.0
    for log in logs:
        if log.diagnostics is None or not log.diagnostics["in_E_star"]:
            continue
        good = log.diag("in_E_star") == 1.0
        gap = log.diag("optimism_gap")[good]
        lhs, rhs, rr = (log.diag(k)[good] for k in ("dev_lhs", "dev_rhs", "relaxed_rhs"))
        has = ~np.isnan(gap)
        checked += int(good.sum())
        opt_bad += int(np.sum(gap[has] < -optimism_tol))
        dv = ~np.isnan(lhs)
        dev_bad += int(np.sum(lhs[dv] > rhs[dv] * (1 + 1e-9)))
        relaxed_bad += int(np.sum(lhs[dv] > rr[dv] * (1 + 1e-9)))
        if dv.any():
            worst_dev = max(worst_dev, float(np.max(lhs[dv] / rhs[dv])))
    return {"rounds_checked": checked, "optimism_violations": opt_bad, "deviation_violations": dev_bad,
            "relaxed_deviation_violations": relaxed_bad, "max_deviation_ratio": worst_dev}


def transitory_stats(logs: list[TrajectoryLog], inst: ProblemInstance, checkpoint: int) -> dict:
    """Detrimental-arm play counts at the checkpoint and at the horizon, per seed."""
    early, final = [], []
    for log in logs:
        counts = detrimental_count_series(log, inst)
        if counts.size == 0:
            early.append(0)
            final.append(0)
            continue
        early.append(int(counts[min(checkpoint, counts.size) - 1]))
        final.append(int(counts[-1]))
    T = max((len(log) for log in logs), default=1)
    plateau = [f - e <= 0.1 * f for e, f in zip(early, final)]
    envelope = 50.0 * inst.dim ** 3 * math.log(T)
    best = float(mu(playable_best(inst).value))
    return {
        "checkpoint": checkpoint,
        "count_at_checkpoint": early,
        "count_at_horizon": final,
        "weighted_count_at_horizon": [best * f for f in final],
        "plateau_fraction": float(np.mean(plateau)) if plateau else 1.0,
        "envelope": envelope,
        "max_final_count": max(final, default=0),
    }


def _regrets(logs):
    return [float(log.cum_regret[-1]) if len(log) else 0.0 for log in logs]


# -- coverage ----------------------------------------------------------------

def _coverage_job(job):
    cfg, inst, arms, seed = job
    env = make_rng(seed, 0)
    sched = RegSchedule(inst.dim, cfg.lambda_floor)
    h = History(inst.dim)
    prev = None
    fail_c = fail_e = 0
    worst, worst_t = 0.0, 0
    star = inst.theta_star
    logger = RoundRobin(arms)
    for t in range(1, cfg.horizon + 1):
        st = build_state(h, cfg.delta, inst.s_bound, sched, t=t, theta0=prev)
        prev = st.theta_hat
        ratio = c_statistic(star, h, st) / st.gamma
        if ratio > worst:
            worst, worst_t = ratio, t
        if not fail_c and ratio > 1.0 + 1e-9:
            fail_c = t
        if not fail_e and not in_E(star, h, st):
            fail_e = t
        arm = logger.next_arm(h, t).arm
        h.append(arm, step(inst, arm, env))
    return fail_c, fail_e, worst, worst_t


def coverage_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    inst = make_instance(cfg, arm_set=FiniteArmSet(
        np.array(cfg.arms, float) if cfg.arms is not None else default_arms(cfg.dim)))
    arms = inst.arm_set.arms
    jobs = [(cfg, inst, arms, cfg.seed + k) for k in range(cfg.replications)]
    out = replicate(_coverage_job, jobs, threads)
    n = len(out)
    ok_c = np.array([r[0] == 0 for r in out])
    ok_e = np.array([r[1] == 0 for r in out])
    cov_c, cov_e = float(ok_c.mean()), float(ok_e.mean())
    se_c = math.sqrt(cov_c * (1 - cov_c) / n)
    se_e = math.sqrt(cov_e * (1 - cov_e) / n)
    threshold = 1.0 - cfg.delta - 3.0 * se_c
    summary = {
        "coverage_C": cov_c, "coverage_E": cov_e, "se_C": se_c, "se_E": se_e,
        "threshold": threshold, "degenerate_delta": cfg.delta >= 1.0,
        "s_bound": inst.s_bound, "theta_star": inst.theta_star.tolist(),
        "first_failure_C": [r[0] for r in out], "first_failure_E": [r[1] for r in out],
        "worst_ratio": [r[2] for r in out], "worst_round": [r[3] for r in out],
    }
    checks = {
        "coverage_C_at_least_threshold": cov_c >= threshold,
        "E_covers_whenever_C_covers": bool(np.all(ok_e >= ok_c)),
    }
    return ExperimentResult("coverage", summary, checks)


# -- regret scaling and transitory phase --------------------------------------

def scaling_instance(cfg: ExperimentConfig, norm: float) -> ProblemInstance:
    if cfg.dim < 2:
        raise DomainError("scaling instances need d >= 2")
    a = math.radians(cfg.angle_deg)
    direction = np.zeros(cfg.dim)
    direction[0], direction[1] = math.cos(a), math.sin(a)
    theta = norm * direction
    s = cfg.s_bound if cfg.s_bound is not None else max(1.0, norm)
    return ProblemInstance(theta, s, make_arm_set(cfg))


def scaling_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    rows, logs, per_norm = [], [], {}
    for norm in cfg.norms:
        inst = scaling_instance(cfg, norm)
        run = _run_reps(cfg, inst, cfg.policy, threads)
        regrets = _regrets(run)
        m, se = mean_se(regrets)
        kx = kappa_summary(inst).kappa_x
        ref = cfg.dim * math.sqrt(cfg.horizon / kx)
        rows.append({"norm": norm, "kappa_x": kx, "mean_regret": m, "se": se, "ratio": m / ref,
                     "regrets": regrets, "errors": [lg.error for lg in run if lg.error],
                     **diagnostic_violations(run)})
        per_norm[norm] = (inst, run)
        logs += [(f"{cfg.policy}_norm{norm:g}_seed{lg.seed}", lg) for lg in run]
    summary = {"instances": rows}
    order = sorted(rows, key=lambda r: r["kappa_x"])
    means = [r["mean_regret"] for r in order]
    ratios = [r["ratio"] for r in rows]
    checks = {
        "regret_decreasing_in_kappa": all(a > b for a, b in zip(means, means[1:])),
        "normalized_ratio_within_factor_3": max(ratios) < 3.0 * min(ratios),
        "optimism_holds": all(r["optimism_violations"] == 0 for r in rows),
        "deviation_bound_holds": all(r["deviation_violations"] == 0 for r in rows),
        "no_episode_errors": not any(r["errors"] for r in rows),
    }
    top_inst, top_run = per_norm[order[-1]["norm"]]
    trans = transitory_stats(top_run, top_inst, cfg.checkpoint or max(1, cfg.horizon // 10))
    summary["transitory"] = trans
    checks["detrimental_plateau"] = trans["plateau_fraction"] >= 0.8
    checks["detrimental_envelope"] = trans["max_final_count"] <= trans["envelope"]
    if cfg.baseline:
        base = _run_reps(cfg, top_inst, "glm_ucb", threads, diagnostics=False)
        bm, bse = mean_se(_regrets(base))
        summary["baseline"] = {"policy": "glm_ucb", "kappa": kappa_summary(top_inst).kappa_global,
                               "norm": order[-1]["norm"], "mean_regret": bm, "se": bse,
                               "regrets": _regrets(base)}
        checks["baseline_at_least_twice"] = bm >= 2.0 * order[-1]["mean_regret"]
        logs += [(f"glm_ucb_norm{order[-1]['norm']:g}_seed{lg.seed}", lg) for lg in base]
    return ExperimentResult("scaling", summary, checks, logs)


def transitory_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    inst = make_instance(cfg)
    run = _run_reps(cfg, inst, cfg.policy, threads)
    trans = transitory_stats(run, inst, cfg.checkpoint or max(1, cfg.horizon // 10))
    m, se = mean_se(_regrets(run))
    summary = {"mean_regret": m, "se": se, "transitory": trans, **diagnostic_violations(run)}
    checks = {
        "detrimental_plateau": trans["plateau_fraction"] >= 0.8,
        "detrimental_envelope": trans["max_final_count"] <= trans["envelope"],
        "no_episode_errors": not any(lg.error for lg in run),
    }
    logs = [(f"{cfg.policy}_seed{lg.seed}", lg) for lg in run]
    return ExperimentResult("transitory", summary, checks, logs)


def run_policy_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    inst = make_instance(cfg)
    run = _run_reps(cfg, inst, cfg.policy, threads)
    regrets = _regrets(run)
    m, se = mean_se(regrets)
    diag = diagnostic_violations(run)
    summary = {"policy": cfg.policy, "instance": inst.digest(), "mean_regret": m, "se": se,
               "regrets": regrets, "errors": [lg.error for lg in run if lg.error], **diag}
    monotone = all(np.all(np.diff(lg.cum_regret) >= 0) and np.all(np.asarray(lg.instant_regret) >= 0)
                   for lg in run)
    checks = {
        "regret_nonnegative_and_monotone": bool(monotone),
        "optimism_holds": diag["optimism_violations"] == 0,
        "no_episode_errors": not summary["errors"],
    }
    logs = [(f"{cfg.policy}_seed{lg.seed}", lg) for lg in run]
    return ExperimentResult("run", summary, checks, logs)


# -- lower bound -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PackingSpec:
    theta_star: np.ndarray
    epsilon: float
    members: np.ndarray

    def flip(self, i: int, member) -> np.ndarray:
        """Negate coordinate i (1-based, i >= 2) of a member."""
        if not 2 <= i <= self.theta_star.shape[0]:
            raise DomainError("flip index must be between 2 and d")
        out = np.array(member, dtype=float)
        out[i - 1] = -out[i - 1]
        return out

    @property
    def kappa_eps(self) -> float:
        return float(inv_mu_dot(np.linalg.norm(self.members[0])))


def build_packing(theta_star, epsilon: float) -> PackingSpec:
    theta = np.asarray(theta_star, dtype=float)
    d = theta.shape[0]
    if d < 2:
        raise DomainError("a packing needs d >= 2")
    if theta[0] <= 0 or np.any(theta[1:] != 0):
        raise DomainError("theta_star must be aligned with the first axis")
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    limit = theta[0] / math.sqrt(d - 1)
    if epsilon > limit:
        raise DomainError(f"epsilon {epsilon:.6g} exceeds |theta_star|/sqrt(d-1) = {limit:.6g}")
    members = []
    for signs in itertools.product((1.0, -1.0), repeat=d - 1):
        m = theta.copy()
        m[1:] = epsilon * np.array(signs)
        members.append(m)
    members = np.array(members)
    norms = np.linalg.norm(members, axis=1)
    assert np.allclose(norms, norms[0], rtol=0, atol=1e-12), "packing members must share a norm"
    members.setflags(write=False)
    return PackingSpec(theta, float(epsilon), members)


def epsilon_for_horizon(kappa_eps: float, T: int) -> float:
    """sqrt( sqrt(kappa_eps / T) / 32 )."""
    if not kappa_eps > 0 or not T > 0:
        raise DomainError("kappa and horizon must be positive")
    return math.sqrt(math.sqrt(kappa_eps / T) / 32.0)


def packing_epsilon(norm: float, T: int, iters: int = 50) -> float:
    """Fixed point of eps = epsilon_for_horizon(kappa of the perturbed norm, T)."""
    eps = epsilon_for_horizon(float(inv_mu_dot(norm)), T)
    for _ in range(iters):
        new = epsilon_for_horizon(float(inv_mu_dot(math.hypot(norm, eps))), T)
        if abs(new - eps) < 1e-15:
            break
        eps = new
    return eps


def lower_bound_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    theta = default_theta(cfg)
    norm = float(np.linalg.norm(theta))
    d = cfg.dim
    nominal = np.zeros(d)
    nominal[0] = norm
    eps = cfg.packing_epsilon if cfg.packing_epsilon is not None else packing_epsilon(norm, cfg.horizon)
    pack = build_packing(nominal, eps)
    k_eps = pack.kappa_eps
    T = cfg.horizon
    ref = d * math.sqrt(T / k_eps)
    s = cfg.s_bound if cfg.s_bound is not None else float(np.linalg.norm(pack.members[0]))
    arm_set = UnitSphere(d, cfg.resolution if d == 2 else None)
    constant = ConstantArm(nominal / norm)
    per_member, const_regret, kl_rows, logs = [], [], [], []
    for idx, member in enumerate(pack.members):
        inst = ProblemInstance(member, s, arm_set)
        run = _run_reps(cfg, inst, cfg.policy, threads, diagnostics=False)
        regrets = _regrets(run)
        m, se = mean_se(regrets)
        per_member.append({"member": member.tolist(), "mean_regret": m, "se": se, "regrets": regrets})
        logs += [(f"{cfg.policy}_member{idx}_seed{lg.seed}", lg) for lg in run]
        clog = run_episode(constant, inst, T, cfg.seed)
        const_regret.append(float(clog.cum_regret[-1]))
        for i in range(2, d + 1):
            other = pack.flip(i, member)
            bounds = [kl_traj_bound(lg, member, other) for lg in run]
            exact = [exact_kl_sum(lg, member, other) for lg in run]
            bm, bse = mean_se(bounds)
            em, ese = mean_se(exact)
            kl_rows.append({"member": idx, "flip": i, "bound_mean": bm, "bound_se": bse,
                            "exact_mean": em, "exact_se": ese})
    worst = max(r["mean_regret"] for r in per_member)
    const_bound = 0.5 * (T / k_eps) * eps ** 2 / (2.0 * norm)
    summary = {
        "epsilon": eps, "kappa_eps": k_eps, "reference": ref, "in_regime": T >= d * d * k_eps,
        "members": per_member, "worst_mean_regret": worst, "ratio": worst / ref,
        "constant_policy_regret": const_regret, "constant_policy_bound": const_bound, "kl": kl_rows,
    }
    checks = {
        "ratio_at_least_0.02": worst / ref >= 0.02,
        "constant_policy_regret_bound": max(const_regret) >= const_bound,
        "kl_bound_dominates_exact": all(r["bound_mean"] >= r["exact_mean"] - 1e-12 for r in kl_rows),
    }
    return ExperimentResult("lowerbound", summary, checks, logs)


def lemma_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    results = run_lemma_suites(cfg.lemma_cases, cfg.seed)
    summary = {"suites": [{"name": r.name, "cases": r.cases, "violations": r.violations,
                           "max_excess": r.max_excess} for r in results]}
    checks = {f"{r.name}_no_violations": r.passed for r in results}
    return ExperimentResult("verify-lemmas", summary, checks)


DISPATCH = {
    "run": run_policy_experiment,
    "coverage": coverage_experiment,
    "scaling": scaling_experiment,
    "transitory": transitory_experiment,
    "lowerbound": lower_bound_experiment,
    "verify-lemmas": lemma_experiment,
}
