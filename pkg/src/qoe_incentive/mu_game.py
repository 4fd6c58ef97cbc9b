"""Reward game among MUs with ASP best responses in the inner loop.

Each round every MU probes R, R + step and R - step on each of its reward
coordinates. Each probe re-solves the affected ASP's best response. All
coordinates then move at once (Jacobi), so a round does not depend on
evaluation order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .asp_solver import BestResponseConfig, BestResponseResult, best_response
from .model import Allocation, Scenario, check_rewards, mu_utilities


@dataclass(frozen=True)
class StepSchedule:
    kind: str = "diminishing"   # "diminishing" (value / t) or "constant" (value)
    value: float = 0.1

    def __post_init__(self):
        if self.kind not in ("diminishing", "constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.value > 0:
            raise ValueError("schedule step must be positive")

    def step(self, t: int) -> float:
        return self.value / t if self.kind == "diminishing" else self.value

    @classmethod
    def parse(cls, text: str) -> "StepSchedule":
        kind, _, value = text.partition(":")
        if not value:
            raise ValueError(f"schedule must look like 'diminishing:u' or 'constant:delta', got {text!r}")
        return cls(kind.strip(), float(value))

    @classmethod
    def from_levels(cls, r_min: float, r_max: float, levels: int) -> "StepSchedule":
        """Constant step matching a quantisation of [r_min, r_max] into ``levels`` cells."""
        return cls("constant", (r_max - r_min) / levels)

    def __str__(self) -> str:
        return f"{self.kind}:{self.value!r}"


@dataclass(frozen=True)
class GameConfig:
    schedule: StepSchedule = field(default_factory=StepSchedule)
    epsilon: float = 1e-5
    max_rounds: int = 500
    initial_rewards: np.ndarray | None = field(default=None, compare=False)
    init_seed: int | None = None
    dead_band: float = 1e-12
    certify: bool = True
    probe_grid: int = 20
    solver: BestResponseConfig = field(default_factory=BestResponseConfig)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")

    def start(self, scenario: Scenario) -> np.ndarray:
        if self.initial_rewards is not None:
            return check_rewards(scenario, np.array(self.initial_rewards, dtype=float)).copy()
        if self.init_seed is not None:
            rng = np.random.default_rng(self.init_seed)
            u = rng.random(scenario.shape)
            return scenario.r_min + u * (scenario.r_max - scenario.r_min)
        return scenario.midpoint_rewards()


@dataclass
class Certification:
    certified: bool
    worst_gain: float
    mu: int = -1
    asp: int = -1
    reward: float = float("nan")


@dataclass
class EquilibriumReport:
    rewards: np.ndarray
    alloc: Allocation
    qoe: np.ndarray
    mu_utilities: np.ndarray
    asp_utilities: np.ndarray
    rounds_used: int
    converged: bool
    utility_change: list[float]          # per-round sum_m |U_m(t) - U_m(t-1)|
    mu_utility_history: np.ndarray       # (rounds + 1) x M
    reward_history: np.ndarray           # (rounds + 1) x N x M
    responses: list[BestResponseResult]
    schedule: str = ""
    certification: Certification | None = None

    @property
    def ne_certified(self) -> bool | None:
        return None if self.certification is None else self.certification.certified


class _Market:
    """Best-response evaluation with a per-run cache keyed on (ASP, reward row)."""

    def __init__(self, scenario: Scenario, cfg: BestResponseConfig, fixed_f=None, fixed_b=None):
        self.s = scenario
        self.cfg = cfg
        self.fixed_f = fixed_f
        self.fixed_b = fixed_b
        self.cache: dict[tuple[int, bytes], BestResponseResult] = {}

    def respond(self, n: int, row: np.ndarray) -> BestResponseResult:
        key = (n, row.tobytes())
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        if len(self.cache) > 50_000:
            self.cache.clear()
        rewards = np.zeros(self.s.shape)
        rewards[n] = row
        res = best_response(
            self.s, n, rewards, self.cfg,
            fixed_f=None if self.fixed_f is None else self.fixed_f[n],
            fixed_b=None if self.fixed_b is None else self.fixed_b[n],
        )
        self.cache[key] = res
        return res

    def state(self, rewards: np.ndarray):
        responses = [self.respond(n, rewards[n]) for n in range(self.s.n_asps)]
        q = np.array([r.qoe for r in responses])
        return responses, q, mu_utilities(self.s, rewards, q)

    def trial_utility(self, rewards, q, n, m, value) -> float:
        """MU m's utility if it alone sets R[n, m] = value and ASP n re-responds."""
        row = rewards[n].copy()
        row[m] = value
        q_new = self.respond(n, row).qoe[m]
        col_q = q[:, m].copy()
        col_q[n] = q_new
        col_r = rewards[:, m].copy()
        col_r[n] = value
        total = 1.0 + col_q.sum()
        return float(self.s.mu[m] * math.log(total) - np.dot(col_r, col_q))


def _play(scenario: Scenario, cfg: GameConfig, rule: str, fixed_f=None, fixed_b=None) -> EquilibriumReport:
    market = _Market(scenario, cfg.solver, fixed_f, fixed_b)
    lo, hi = scenario.r_min, scenario.r_max
    rewards = cfg.start(scenario)
    responses, q, u = market.state(rewards)
    u_hist = [u.copy()]
    r_hist = [rewards.copy()]
    changes: list[float] = []
    converged = False
    rounds = 0
    for t in range(1, cfg.max_rounds + 1):
        rounds = t
        delta = cfg.schedule.step(t)
        nxt = rewards.copy()
        for n in range(scenario.n_asps):
            for m in range(scenario.n_mus):
                r0 = rewards[n, m]
                up = min(r0 + delta, hi[m])
                down = max(r0 - delta, lo[m])
                u_up = market.trial_utility(rewards, q, n, m, up) if up != r0 else u[m]
                u_down = market.trial_utility(rewards, q, n, m, down) if down != r0 else u[m]
                if rule == "three_way":
                    best, best_u = r0, u[m] + cfg.dead_band
                    if u_up > best_u:
                        best, best_u = up, u_up
                    if u_down > best_u:
                        best = down
                    nxt[n, m] = best
                else:
                    diff = u_up - u_down
                    if abs(diff) > cfg.dead_band:
                        nxt[n, m] = up if diff > 0 else down
        rewards = nxt
        responses, q, u_new = market.state(rewards)
        change = float(np.sum(np.abs(u_new - u)))
        u = u_new
        changes.append(change)
        u_hist.append(u.copy())
        r_hist.append(rewards.copy())
        if change <= cfg.epsilon:
            converged = True
            break

    alloc = Allocation(np.array([r.f for r in responses]), np.array([r.b for r in responses]))
    report = EquilibriumReport(
        rewards=rewards,
        alloc=alloc,
        qoe=q,
        mu_utilities=u,
        asp_utilities=np.array([r.utility for r in responses]),
        rounds_used=rounds,
        converged=converged,
        utility_change=changes,
        mu_utility_history=np.array(u_hist),
        reward_history=np.array(r_hist),
        responses=responses,
        schedule=str(cfg.schedule),
    )
    if cfg.certify:
        probe = cfg.schedule.step(max(rounds, 1))
        report.certification = certify_epsilon_ne(
            scenario, rewards, probe, cfg.epsilon, cfg.probe_grid, cfg.solver,
            fixed_f=fixed_f, fixed_b=fixed_b, _market=market,
        )
    return report


def run_game(scenario: Scenario, cfg: GameConfig | None = None, *, fixed_f=None, fixed_b=None) -> EquilibriumReport:
    """Three-way probe dynamics: each coordinate moves to the best of R, R + step, R - step."""
    return _play(scenario, cfg or GameConfig(), "three_way", fixed_f, fixed_b)


def finite_diff_update(scenario: Scenario, cfg: GameConfig | None = None, *, fixed_f=None, fixed_b=None) -> EquilibriumReport:
    """Sign-of-central-difference dynamics: R += step * sign(U(R + step) - U(R - step))."""
    return _play(scenario, cfg or GameConfig(), "sign", fixed_f, fixed_b)


def direction_estimate(scenario: Scenario, rewards: np.ndarray, n: int, m: int, delta: float,
                       cfg: BestResponseConfig | None = None) -> float:
    """Two-sided difference quotient of MU m's utility in R[n, m] with ASP re-response."""
    market = _Market(scenario, cfg or BestResponseConfig())
    rewards = np.asarray(rewards, dtype=float)
    _, q, _ = market.state(rewards)
    up = market.trial_utility(rewards, q, n, m, rewards[n, m] + delta)
    down = market.trial_utility(rewards, q, n, m, rewards[n, m] - delta)
    return (up - down) / (2.0 * delta)


def certify_epsilon_ne(
    scenario: Scenario,
    rewards: np.ndarray,
    probe_delta: float,
    epsilon: float,
    grid_points: int = 20,
    cfg: BestResponseConfig | None = None,
    *,
    fixed_f=None,
    fixed_b=None,
    _market: _Market | None = None,
) -> Certification:
    """Largest unilateral single-coordinate gain over R +/- probe_delta and a reward grid."""
    rewards = check_rewards(scenario, rewards)
    market = _market or _Market(scenario, cfg or BestResponseConfig(), fixed_f, fixed_b)
    _, q, u = market.state(rewards)
    worst = Certification(True, -math.inf)
    for m in range(scenario.n_mus):
        lo, hi = scenario.r_min[m], scenario.r_max[m]
        grid = np.linspace(lo, hi, grid_points) if grid_points > 0 else np.empty(0)
        for n in range(scenario.n_asps):
            r0 = rewards[n, m]
            candidates = np.unique(np.clip(np.concatenate([[r0 - probe_delta, r0 + probe_delta], grid]), lo, hi))
            for value in candidates:
                if value == r0:
                    continue
                gain = market.trial_utility(rewards, q, n, m, value) - u[m]
                if gain > worst.worst_gain:
                    worst = Certification(True, gain, m, n, float(value))
    worst.certified = worst.worst_gain <= epsilon
    return worst


# ---------------------------------------------------------------------------
# convergence harness
# ---------------------------------------------------------------------------

def reference_equilibrium(scenario: Scenario, cfg: GameConfig | None = None, rounds: int = 2000,
                          polish: tuple[float, ...] = (1e-3, 1e-4, 1e-5, 1e-6)) -> np.ndarray:
    """High-accuracy equilibrium rewards.

    A diminishing-step run is followed by constant-step polishing stages whose
    steps are the given fractions of the reward range; each stage runs until
    no coordinate moves.
    """
    base = cfg or GameConfig()
    run_cfg = GameConfig(
        schedule=StepSchedule("diminishing", base.schedule.value),
        epsilon=0.0,
        max_rounds=rounds,
        initial_rewards=base.initial_rewards,
        init_seed=base.init_seed,
        certify=False,
        solver=base.solver,
    )
    rewards = run_game(scenario, run_cfg).rewards
    span = float(np.max(scenario.r_max - scenario.r_min)) or 1.0
    for frac in polish:
        stage = replace(run_cfg, schedule=StepSchedule("constant", frac * span), initial_rewards=rewards)
        rewards = run_game(scenario, stage).rewards
    return rewards


def utility_gap_trajectory(scenario: Scenario, report: EquilibriumReport, reference: np.ndarray,
                           cfg: BestResponseConfig | None = None) -> np.ndarray:
    """D_t = sum_m |U_m(R*) - U_m(R_t)| along a run, against reference rewards R*."""
    market = _Market(scenario, cfg or BestResponseConfig())
    _, _, u_star = market.state(np.asarray(reference, dtype=float))
    return np.abs(report.mu_utility_history - u_star[None, :]).sum(axis=1)


def neighborhood_envelope(scenario: Scenario, delta_hat: float) -> float:
    """Constant-step accuracy envelope delta_hat * M * N / 2."""
    return delta_hat * scenario.n_mus * scenario.n_asps / 2.0


def first_round_below(gaps: np.ndarray, level: float) -> int | None:
    hit = np.flatnonzero(np.asarray(gaps) <= level)
    return int(hit[0]) if hit.size else None
