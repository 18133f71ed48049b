"""Bandit environment, policies, the episode loop and trajectory logs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .confidence import ConfidenceState, build_state, deviation_bound, in_C, in_E, relaxed_deviation_bound
from .errors import DomainError, InstanceMismatchError
from .estimation import History, RegSchedule
from .logistic import (
    BestArm, ProblemInstance, best_arm, check_arm, detrimental_set, inv_mu_dot, kappa_summary, mu,
    snap_to_circle,
)
from .planning import SolverOpts, glm_ucb_scores, plan_ball, plan_grid_oracle, plan_ofulog_r


def make_rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for one (seed, stream) pair."""
    ss = np.random.SeedSequence(int(seed)).spawn(stream + 1)[stream]
    return np.random.Generator(np.random.Philox(ss))


def step(inst: ProblemInstance, arm, rng: np.random.Generator) -> int:
    """Bernoulli reward with mean mu(arm . theta_star)."""
    p = float(mu(float(np.asarray(arm) @ inst.theta_star)))
    return int(rng.random() < p)


# -- policies ----------------------------------------------------------------

@dataclass
class Decision:
    arm: np.ndarray
    index: int = -1
    optimistic_value: float | None = None
    state: ConfidenceState | None = None
    theta_tilde: np.ndarray | None = None


def _grid_of(inst: ProblemInstance):
    """Finite candidate arms of an instance, or None for a continuous set."""
    return inst.arm_set.candidates()


def playable_best(inst: ProblemInstance) -> BestArm:
    """Best arm among those a policy can play: the grid optimum for a
    discretized ball or sphere, the closed form otherwise."""
    grid = _grid_of(inst)
    if grid is not None and inst.arm_set.kind != "finite":
        vals = grid @ inst.theta_star
        i = int(np.argmax(vals))
        return BestArm(grid[i], float(vals[i]), i)
    return best_arm(inst.arm_set, inst.theta_star)


class Policy:
    """next_arm(h, t) picks the arm for round t given the first t - 1 rounds."""

    name = "policy"

    def params(self) -> dict:
        return {}

    def start(self, inst: ProblemInstance, rng: np.random.Generator) -> None:
        self.inst = inst
        self.rng = rng

    def next_arm(self, h: History, t: int) -> Decision:
        raise NotImplementedError


class _Learner(Policy):
    """Shared MLE bookkeeping: one ConfidenceState per round, warm-started."""

    def __init__(self, delta: float = 0.1, floor: float = 1.0):
        self.delta = delta
        self.floor = floor

    def start(self, inst, rng):
        super().start(inst, rng)
        self.sched = RegSchedule(inst.dim, self.floor)
        self._prev = None

    def belief(self, h: History, t: int) -> ConfidenceState:
        st = build_state(h, self.delta, self.inst.s_bound, self.sched, t=t, theta0=self._prev)
        self._prev = st.theta_hat
        return st


class OFULogR(_Learner):
    name = "ofulog_r"

    def __init__(self, delta=0.1, floor=1.0, opts: SolverOpts | None = None):
        super().__init__(delta, floor)
        self.opts = opts or SolverOpts()

    def params(self):
        return {"delta": self.delta, "tol": self.opts.tol, "restarts": self.opts.restarts}

    def next_arm(self, h, t):
        st = self.belief(h, t)
        arm_set = self.inst.arm_set
        if arm_set.kind == "finite":
            res = plan_ofulog_r(h, st, arm_set, self.opts)
        else:
            res = plan_ball(h, st, self.inst.dim, self.opts,
                            resolution=arm_set.resolution if self.inst.dim == 2 else None)
        return Decision(res.arm, res.arm_index, res.optimistic_value, st, res.theta_tilde)


class OFULogGrid(_Learner):
    """Exact planning over C_t (or E_t) by grid search; d <= 2 only."""

    name = "ofulog_grid"

    def __init__(self, delta=0.1, floor=1.0, set_choice="C", resolution=200):
        super().__init__(delta, floor)
        self.set_choice = set_choice
        self.resolution = resolution

    def params(self):
        return {"delta": self.delta, "set": self.set_choice, "resolution": self.resolution}

    def next_arm(self, h, t):
        st = self.belief(h, t)
        res = plan_grid_oracle(h, st, self.inst.arm_set, self.set_choice, self.resolution)
        return Decision(res.arm, res.arm_index, res.optimistic_value, st, res.theta_tilde)


class GlmUcbKappa(_Learner):
    """mu(x.theta_hat) + kappa gamma ||x||_{V^-1}; kappa defaults to the global constant."""

    name = "glm_ucb"

    def __init__(self, delta=0.1, floor=1.0, kappa: float | None = None):
        super().__init__(delta, floor)
        self.kappa = kappa

    def params(self):
        return {"delta": self.delta, "kappa": self.kappa}

    def start(self, inst, rng):
        super().start(inst, rng)
        self.arms = _grid_of(inst)
        if self.arms is None:
            raise DomainError("GLM-UCB needs a finite or discretized arm set")
        self._kappa = self.kappa if self.kappa is not None else kappa_summary(inst).kappa_global

    def next_arm(self, h, t):
        st = self.belief(h, t)
        scores = glm_ucb_scores(h, st, self.arms, self._kappa)
        i = int(np.argmax(scores))
        return Decision(self.arms[i].copy(), i, None, st)


class EpsilonGreedy(_Learner):
    name = "eps_greedy"

    def __init__(self, delta=0.1, floor=1.0, epsilon: float = 0.1):
        super().__init__(delta, floor)
        if not 0 <= epsilon <= 1:
            raise DomainError("epsilon must lie in [0, 1]")
        self.epsilon = epsilon

    def params(self):
        return {"epsilon": self.epsilon}

    def start(self, inst, rng):
        super().start(inst, rng)
        self.arms = _grid_of(inst)

    def next_arm(self, h, t):
        st = self.belief(h, t)
        explore = self.rng.random() < self.epsilon
        if self.arms is not None:
            if explore:
                i = int(self.rng.integers(self.arms.shape[0]))
            else:
                i = int(np.argmax(self.arms @ st.theta_hat))
            return Decision(self.arms[i].copy(), i, None, st)
        d = self.inst.dim
        if explore or not np.any(st.theta_hat):
            v = self.rng.normal(size=d)
            return Decision(v / np.linalg.norm(v), -1, None, st)
        return Decision(st.theta_hat / np.linalg.norm(st.theta_hat), -1, None, st)


def _index_of(inst: ProblemInstance, arm) -> int:
    if inst.arm_set.kind == "finite":
        hits = np.flatnonzero(np.all(inst.arm_set.arms == arm, axis=1))
        return int(hits[0]) if hits.size else -1
    if inst.dim == 2 and inst.arm_set.resolution is not None:
        return snap_to_circle(arm, inst.arm_set.resolution)
    return -1


class Oracle(Policy):
    """Plays the best arm of the true instance; a diagnostic, not a learner."""

    name = "oracle"

    def start(self, inst, rng):
        super().start(inst, rng)
        grid = _grid_of(inst)
        if grid is not None:
            i = int(np.argmax(grid @ inst.theta_star))
            self._decision = Decision(grid[i].copy(), i)
        else:
            self._decision = Decision(best_arm(inst.arm_set, inst.theta_star).arm.copy(), -1)

    def next_arm(self, h, t):
        return self._decision


class ConstantArm(Policy):
    name = "constant"

    def __init__(self, arm):
        self.arm = check_arm(arm).copy()

    def params(self):
        return {"arm": self.arm.tolist()}

    def start(self, inst, rng):
        super().start(inst, rng)
        self._decision = Decision(self.arm, _index_of(inst, self.arm))

    def next_arm(self, h, t):
        return self._decision


class RoundRobin(Policy):
    """Cycles through a fixed arm dictionary (the coverage logging policy)."""

    name = "round_robin"

    def __init__(self, arms):
        self.arms = np.array(arms, dtype=float, ndmin=2)
        for a in self.arms:
            check_arm(a)

    def next_arm(self, h, t):
        i = (t - 1) % self.arms.shape[0]
        return Decision(self.arms[i], i)


# -- trajectories ------------------------------------------------------------

DIAG_FIELDS = ("in_E_star", "in_C_star", "optimism_gap", "dev_lhs", "dev_rhs", "relaxed_rhs")


@dataclass(eq=False)
class TrajectoryLog:
    seed: int
    policy_name: str
    instance_digest: str
    dim: int
    arm_index: list = field(default_factory=list)
    arms: list = field(default_factory=list)
    reward: list = field(default_factory=list)
    expected_reward: list = field(default_factory=list)
    instant_regret: list = field(default_factory=list)
    in_x_minus: list = field(default_factory=list)
    optimistic_value: list = field(default_factory=list)
    diagnostics: dict | None = None
    error: str | None = None

    def __len__(self) -> int:
        return len(self.reward)

    @property
    def arm_matrix(self) -> np.ndarray:
        return np.array(self.arms, dtype=float).reshape(len(self), self.dim)

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(np.asarray(self.instant_regret, dtype=float))

    def diag(self, name: str) -> np.ndarray:
        return np.asarray(self.diagnostics[name], dtype=float)


def run_episode(policy: Policy, inst: ProblemInstance, T: int, seed: int,
                diagnostics: bool = False) -> TrajectoryLog:
    """Play T rounds; a planner failure stops the episode and tags the log."""
    env_rng, pol_rng = make_rng(seed, 0), make_rng(seed, 1)
    policy.start(inst, pol_rng)
    best = playable_best(inst)
    mu_best = float(mu(best.value))
    xminus = detrimental_set(inst)
    log = TrajectoryLog(int(seed), policy.name, inst.digest(), inst.dim)
    if diagnostics:
        log.diagnostics = {k: [] for k in DIAG_FIELDS}
    h = History(inst.dim)
    for t in range(1, T + 1):
        try:
            dec = policy.next_arm(h, t)
        except Exception as exc:  # recorded on the log, the partial trajectory is kept
            log.error = f"round {t}: {type(exc).__name__}: {exc}"
            break
        arm = np.asarray(dec.arm, dtype=float)
        z = float(arm @ inst.theta_star)
        r = step(inst, arm, env_rng)
        log.arm_index.append(int(dec.index))
        log.arms.extend(arm.tolist())
        log.reward.append(r)
        log.expected_reward.append(float(mu(z)))
        log.instant_regret.append(max(0.0, mu_best - float(mu(z))))
        log.in_x_minus.append(bool(xminus.mask(arm)[0]))
        log.optimistic_value.append(dec.optimistic_value)
        if diagnostics:
            _record_diagnostics(log.diagnostics, h, dec, inst, best.value)
        h.append(arm, r)
    return log


def _record_diagnostics(rec: dict, h: History, dec: Decision, inst: ProblemInstance, best_value: float):
    st = dec.state
    nan = float("nan")
    if st is None:
        for k in DIAG_FIELDS:
            rec[k].append(nan)
        return
    star = inst.theta_star
    rec["in_E_star"].append(float(in_E(star, h, st)))
    rec["in_C_star"].append(float(in_C(star, h, st)))
    ov = dec.optimistic_value
    rec["optimism_gap"].append(nan if ov is None else ov - best_value)
    if dec.theta_tilde is None:
        rec["dev_lhs"].append(nan)
        rec["dev_rhs"].append(nan)
        rec["relaxed_rhs"].append(nan)
        return
    lhs, rhs = deviation_bound(dec.theta_tilde, star, h, st)
    _, rrhs = relaxed_deviation_bound(dec.theta_tilde, star, h, st)
    rec["dev_lhs"].append(lhs)
    rec["dev_rhs"].append(rhs)
    rec["relaxed_rhs"].append(rrhs)


def _check_log(log: TrajectoryLog, inst: ProblemInstance):
    if log.instance_digest != inst.digest():
        raise InstanceMismatchError(
            f"log was produced for instance {log.instance_digest}, not {inst.digest()}")


def regret_series(log: TrajectoryLog, inst: ProblemInstance) -> np.ndarray:
    _check_log(log, inst)
    return log.cum_regret


def detrimental_count_series(log: TrajectoryLog, inst: ProblemInstance) -> np.ndarray:
    _check_log(log, inst)
    return np.cumsum(np.asarray(log.in_x_minus, dtype=np.int64))


def weighted_detrimental_series(log: TrajectoryLog, inst: ProblemInstance) -> np.ndarray:
    """Detrimental count scaled by the best arm's mean reward."""
    best = playable_best(inst).value
    return float(mu(best)) * detrimental_count_series(log, inst)


CSV_HEADER = ["t", "arm_index", "arm_coords", "reward", "expected_reward", "instant_regret",
              "cum_regret", "in_x_minus", "optimistic_value"]


def fmt(v: float) -> str:
    return f"{v:.12g}"


def write_trajectory_csv(log: TrajectoryLog, path) -> None:
    cum = log.cum_regret
    arms = log.arm_matrix
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i in range(len(log)):
            ov = log.optimistic_value[i]
            w.writerow([
                i + 1, log.arm_index[i], ";".join(fmt(v) for v in arms[i]), log.reward[i],
                fmt(log.expected_reward[i]), fmt(log.instant_regret[i]), fmt(cum[i]),
                int(log.in_x_minus[i]), "" if ov is None else fmt(ov),
            ])


def read_trajectory_csv(path, seed: int, policy_name: str, instance_digest: str) -> TrajectoryLog:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    dim = len(rows[0]["arm_coords"].split(";")) if rows else 0
    log = TrajectoryLog(seed, policy_name, instance_digest, dim)
    for row in rows:
        log.arm_index.append(int(row["arm_index"]))
        log.arms.extend(float(v) for v in row["arm_coords"].split(";"))
        log.reward.append(int(row["reward"]))
        log.expected_reward.append(float(row["expected_reward"]))
        log.instant_regret.append(float(row["instant_regret"]))
        log.in_x_minus.append(row["in_x_minus"] == "1")
        log.optimistic_value.append(float(row["optimistic_value"]) if row["optimistic_value"] else None)
    return log


def exact_kl_sum(log: TrajectoryLog, theta, theta_prime) -> float:
    """Sum over played arms of KL(Bern(mu(x.theta)) || Bern(mu(x.theta')))."""
    X = log.arm_matrix
    p = mu(X @ np.asarray(theta, float))
    q = mu(X @ np.asarray(theta_prime, float))
    with np.errstate(divide="ignore", invalid="ignore"):
        kl = p * np.log(p / q) + (1 - p) * np.log((1 - p) / (1 - q))
    return float(np.nansum(kl))


def kl_traj_bound(log: TrajectoryLog, theta, theta_prime) -> float:
    """Chi-square style upper bound on the trajectory KL along the realized arms."""
    X = log.arm_matrix
    z1 = X @ np.asarray(theta, float)
    z2 = X @ np.asarray(theta_prime, float)
    return float(np.sum((mu(z1) - mu(z2)) ** 2 * inv_mu_dot(z2)))


def mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float(v.mean()) if v.size else math.nan, 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))
