"""Comparison schemes and shared market metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .asp_solver import InfeasibleError, respond_all
from .model import Allocation, Scenario, mu_utilities
from .mu_game import EquilibriumReport, GameConfig, run_game

SCHEME_KINDS = ("proposed", "ratio", "token", "onlyf", "onlyb")


@dataclass(frozen=True)
class Scheme:
    kind: str
    value: float | None = None      # r_total for ratio, rho for token
    split: str = "equal"            # ratio only: "equal" or "load"

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ValueError(f"unknown scheme {self.kind!r}; expected one of {SCHEME_KINDS}")
        if self.kind == "ratio" and (self.value is None or self.value <= 0):
            raise ValueError("ratio scheme needs r_total > 0")
        if self.kind == "token" and self.value is not None and self.value <= 0:
            raise ValueError("token scheme needs rho > 0")
        if self.split not in ("equal", "load"):
            raise ValueError(f"unknown ratio split {self.split!r}")

    @classmethod
    def parse(cls, text: str) -> "Scheme":
        parts = text.strip().lower().split(":")
        kind = parts[0]
        value = float(parts[1]) if len(parts) > 1 and parts[1] else None
        split = parts[2] if len(parts) > 2 else "equal"
        return cls(kind, value, split)

    @property
    def label(self) -> str:
        if self.kind == "ratio":
            tail = "" if self.split == "equal" else ":load"
            return f"ratio:{self.value:g}{tail}"
        if self.kind == "token" and self.value is not None:
            return f"token:{self.value:g}"
        return self.kind


PROPOSED = Scheme("proposed")


@dataclass
class MarketMetrics:
    f_usage_ratio: np.ndarray
    b_usage_ratio: np.ndarray
    avg_mu_cost: float
    avg_asp_cost: float
    avg_mu_utility: float
    avg_asp_utility: float

    @property
    def mean_f_usage(self) -> float:
        return float(np.mean(self.f_usage_ratio))

    @property
    def mean_b_usage(self) -> float:
        return float(np.mean(self.b_usage_ratio))

    def as_dict(self) -> dict[str, float]:
        out = {k: float(v) for k, v in asdict(self).items() if np.ndim(v) == 0}
        out["f_usage_ratio"] = self.mean_f_usage
        out["b_usage_ratio"] = self.mean_b_usage
        return out


@dataclass
class SchemeOutcome:
    scheme: Scheme
    rewards: np.ndarray
    alloc: Allocation
    metrics: MarketMetrics
    report: EquilibriumReport | None = None


def compute_metrics(scenario: Scenario, rewards: np.ndarray, alloc: Allocation) -> MarketMetrics:
    rewards = np.asarray(rewards, dtype=float)
    q = scenario.kappa[:, None] - scenario.compute_load / alloc.f - scenario.comm_load / alloc.b
    spend = scenario.c_f[:, None] * alloc.f + scenario.c_b[:, None] * alloc.b
    income = rewards * q
    return MarketMetrics(
        f_usage_ratio=alloc.f.sum(axis=1) / scenario.f_max,
        b_usage_ratio=alloc.b.sum(axis=1) / scenario.b_max,
        avg_mu_cost=float(income.sum() / scenario.n_mus),
        avg_asp_cost=float(spend.sum() / scenario.n_asps),
        avg_mu_utility=float(np.mean(mu_utilities(scenario, rewards, q))),
        avg_asp_utility=float(np.mean((income - spend).sum(axis=1))),
    )


def ratio_rewards(scenario: Scenario, r_total: float, split: str = "equal") -> np.ndarray:
    if split == "equal":
        return np.full(scenario.shape, r_total / scenario.n_asps)
    load = scenario.compute_load
    return r_total * load / load.sum(axis=0, keepdims=True)


def token_rewards(scenario: Scenario, rho: float | None = None) -> np.ndarray:
    tokens = scenario.x_in + scenario.x_out
    if rho is None:
        rho = default_rho(scenario)
    return rho * tokens


def default_rho(scenario: Scenario) -> float:
    """Price per token that makes the average token reward equal the midpoint reward."""
    mid = float(np.mean(0.5 * (scenario.r_min + scenario.r_max)))
    return mid / float(np.mean(scenario.x_in + scenario.x_out))


def equal_shares(scenario: Scenario, resource: str) -> np.ndarray:
    cap = scenario.f_max if resource == "f" else scenario.b_max
    return np.broadcast_to((cap / scenario.n_mus)[:, None], scenario.shape).copy()


def run_scheme(scenario: Scenario, scheme: Scheme, cfg: GameConfig | None = None) -> SchemeOutcome:
    cfg = cfg or GameConfig()
    try:
        if scheme.kind in ("ratio", "token"):
            rewards = (ratio_rewards(scenario, scheme.value, scheme.split) if scheme.kind == "ratio"
                       else token_rewards(scenario, scheme.value))
            _, alloc = respond_all(scenario, rewards, cfg.solver)
            return SchemeOutcome(scheme, rewards, alloc, compute_metrics(scenario, rewards, alloc))
        fixed_f = equal_shares(scenario, "f") if scheme.kind == "onlyb" else None
        fixed_b = equal_shares(scenario, "b") if scheme.kind == "onlyf" else None
        report = run_game(scenario, cfg, fixed_f=fixed_f, fixed_b=fixed_b)
    except InfeasibleError as exc:
        raise InfeasibleError(f"scheme {scheme.label}: {exc}", exc.asp, exc.mus) from exc
    return SchemeOutcome(scheme, report.rewards, report.alloc,
                         compute_metrics(scenario, report.rewards, report.alloc), report)
