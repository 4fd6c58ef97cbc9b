"""Domain types, the QoE metric and the two utility functions.

Everything here is in canonical SI units: seconds, FLOPS, Hz, watts.
Rewards are currency per second of QoE.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

BITS_PER_TOKEN = 32


class DomainError(ValueError):
    """Raised when an input falls outside the domain of a formula."""


# ---------------------------------------------------------------------------
# accuracy gap bound
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GapBoundParams:
    eta: float
    zeta0: float
    upsilon: float = 1.0
    k_examples: int = 1

    def __post_init__(self):
        if not 0.0 <= self.eta < 0.5:
            raise DomainError(f"eta must lie in [0, 0.5), got {self.eta}")
        if not 0.0 <= self.zeta0 < 1.0:
            raise DomainError(f"zeta0 must lie in [0, 1), got {self.zeta0}")
        if self.upsilon < 1.0:
            raise DomainError(f"upsilon must be >= 1, got {self.upsilon}")
        if self.k_examples < 0:
            raise DomainError(f"k_examples must be >= 0, got {self.k_examples}")

    @property
    def ratio(self) -> float:
        """Factor by which one more CoT example shrinks the bound."""
        return self.upsilon * self.eta / (1.0 - self.eta)

    def with_k(self, k: int) -> "GapBoundParams":
        return GapBoundParams(self.eta, self.zeta0, self.upsilon, k)


def gap_bound(p: GapBoundParams) -> float:
    k = p.k_examples
    beta = 2.0 * p.upsilon**k * p.zeta0 / (1.0 - p.zeta0)
    return beta * (p.eta / (1.0 - p.eta)) ** k


def examples_for_accuracy(theta_hat: float, p: GapBoundParams, rtol: float = 1e-9) -> int:
    """Smallest K whose gap bound does not exceed ``theta_hat``.

    Requires the bound to shrink with K (``p.ratio < 1``). Values within
    ``rtol`` of a bound level map onto that level's K.
    """
    if not 0.0 < theta_hat:
        raise DomainError(f"theta_hat must be positive, got {theta_hat}")
    if not 0.0 < p.ratio < 1.0:
        raise DomainError("gap bound is not decreasing in K for these parameters")
    beta0 = gap_bound(p.with_k(0))
    if theta_hat >= beta0:
        return 0
    k = math.log(theta_hat / beta0) / math.log(p.ratio)
    k_round = round(k)
    if abs(k - k_round) <= rtol * max(1.0, abs(k)):
        return int(k_round)
    return int(math.ceil(k))


# ---------------------------------------------------------------------------
# demands, channels and agents
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Demand:
    theta_hat: float
    x_in: int
    x_out: int

    def __post_init__(self):
        if not 0.0 < self.theta_hat <= 1.0:
            raise DomainError(f"theta_hat must lie in (0, 1], got {self.theta_hat}")
        if self.x_in < 0 or self.x_out < 0:
            raise DomainError("token counts must be non-negative")


@dataclass(frozen=True)
class Channel:
    """Link quality between an ASP and an MU, stored as a linear SNR."""

    snr: float

    def __post_init__(self):
        if not self.snr > 0.0:
            raise DomainError(f"snr must be positive, got {self.snr}")

    @classmethod
    def from_link(cls, gain: float, tx_power: float, noise_power: float) -> "Channel":
        if gain <= 0 or tx_power <= 0 or noise_power <= 0:
            raise DomainError("gain, tx_power and noise_power must be positive")
        return cls(gain * tx_power / noise_power)

    @classmethod
    def from_db(cls, snr_db: float) -> "Channel":
        return cls(10.0 ** (snr_db / 10.0))

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.snr)

    @property
    def spectral_efficiency(self) -> float:
        return math.log2(1.0 + self.snr)


@dataclass(frozen=True)
class AspParams:
    kappa: float    # s
    xi: float       # FLOPs per token-unit
    c_f: float      # currency per FLOPS
    c_b: float      # currency per Hz
    f_max: float    # FLOPS
    b_max: float    # Hz

    def __post_init__(self):
        for name in ("kappa", "xi", "c_f", "c_b", "f_max", "b_max"):
            if not getattr(self, name) > 0:
                raise DomainError(f"AspParams.{name} must be positive")


@dataclass(frozen=True)
class MuParams:
    mu: float
    r_min: float
    r_max: float

    def __post_init__(self):
        if not self.mu > 0:
            raise DomainError("MuParams.mu must be positive")
        if not 0.0 < self.r_min <= self.r_max:
            raise DomainError(f"need 0 < r_min <= r_max, got {self.r_min}, {self.r_max}")


@dataclass(frozen=True, eq=False)
class Scenario:
    """Full market description: N ASPs, M MUs and an N x M grid of demands/channels."""

    asps: tuple[AspParams, ...]
    mus: tuple[MuParams, ...]
    demands: tuple[tuple[Demand, ...], ...]
    channels: tuple[tuple[Channel, ...], ...]
    seed: int | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "asps", tuple(self.asps))
        object.__setattr__(self, "mus", tuple(self.mus))
        object.__setattr__(self, "demands", tuple(tuple(r) for r in self.demands))
        object.__setattr__(self, "channels", tuple(tuple(r) for r in self.channels))
        n, m = len(self.asps), len(self.mus)
        if n < 1 or m < 1:
            raise DomainError("a scenario needs at least one ASP and one MU")
        for grid, label in ((self.demands, "demands"), (self.channels, "channels")):
            if len(grid) != n or any(len(row) != m for row in grid):
                raise DomainError(f"{label} grid must be {n} x {m}")

    @property
    def n_asps(self) -> int:
        return len(self.asps)

    @property
    def n_mus(self) -> int:
        return len(self.mus)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_asps, self.n_mus

    # vectorised views used by the solvers
    @cached_property
    def kappa(self) -> np.ndarray:
        return np.array([a.kappa for a in self.asps])

    @cached_property
    def c_f(self) -> np.ndarray:
        return np.array([a.c_f for a in self.asps])

    @cached_property
    def c_b(self) -> np.ndarray:
        return np.array([a.c_b for a in self.asps])

    @cached_property
    def f_max(self) -> np.ndarray:
        return np.array([a.f_max for a in self.asps])

    @cached_property
    def b_max(self) -> np.ndarray:
        return np.array([a.b_max for a in self.asps])

    @cached_property
    def mu(self) -> np.ndarray:
        return np.array([u.mu for u in self.mus])

    @cached_property
    def r_min(self) -> np.ndarray:
        return np.array([u.r_min for u in self.mus])

    @cached_property
    def r_max(self) -> np.ndarray:
        return np.array([u.r_max for u in self.mus])

    @cached_property
    def x_in(self) -> np.ndarray:
        return np.array([[d.x_in for d in row] for row in self.demands], dtype=float)

    @cached_property
    def x_out(self) -> np.ndarray:
        return np.array([[d.x_out for d in row] for row in self.demands], dtype=float)

    @cached_property
    def theta_hat(self) -> np.ndarray:
        return np.array([[d.theta_hat for d in row] for row in self.demands])

    @cached_property
    def snr(self) -> np.ndarray:
        return np.array([[c.snr for c in row] for row in self.channels])

    @cached_property
    def compute_load(self) -> np.ndarray:
        """FLOPs needed per pair; QoE loses compute_load / f seconds."""
        xi = np.array([a.xi for a in self.asps])[:, None]
        return compute_load(xi, self.theta_hat, self.x_in, self.x_out)

    @cached_property
    def comm_load(self) -> np.ndarray:
        """Bits per (bit/s/Hz) per pair; QoE loses comm_load / b seconds."""
        return comm_load(self.x_in, self.x_out, self.snr)

    def midpoint_rewards(self) -> np.ndarray:
        mid = 0.5 * (self.r_min + self.r_max)
        return np.broadcast_to(mid, self.shape).copy()

    def clip_rewards(self, rewards: np.ndarray) -> np.ndarray:
        return np.clip(rewards, self.r_min[None, :], self.r_max[None, :])

    def with_demand(self, n: int, m: int, **changes) -> "Scenario":
        rows = [list(r) for r in self.demands]
        old = rows[n][m]
        rows[n][m] = Demand(**{"theta_hat": old.theta_hat, "x_in": old.x_in, "x_out": old.x_out, **changes})
        return Scenario(self.asps, self.mus, rows, self.channels, self.seed, self.name)

    def with_asp(self, n: int, **changes) -> "Scenario":
        asps = list(self.asps)
        a = asps[n]
        asps[n] = AspParams(**{**a.__dict__, **changes})
        return Scenario(asps, self.mus, self.demands, self.channels, self.seed, self.name)


@dataclass
class Allocation:
    f: np.ndarray   # N x M FLOPS
    b: np.ndarray   # N x M Hz

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.f.shape != self.b.shape:
            raise DomainError("f and b must have the same shape")

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> "Allocation":
        return cls(np.zeros(shape), np.zeros(shape))

    def within_budgets(self, scenario: Scenario, tol: float = 1e-9) -> bool:
        return bool(
            np.all(self.f.sum(axis=1) <= scenario.f_max * (1 + tol))
            and np.all(self.b.sum(axis=1) <= scenario.b_max * (1 + tol))
        )


def check_rewards(scenario: Scenario, rewards: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    if r.shape != scenario.shape:
        raise DomainError(f"reward matrix must be {scenario.shape}, got {r.shape}")
    lo = scenario.r_min[None, :] * (1 - tol)
    hi = scenario.r_max[None, :] * (1 + tol)
    if np.any(r < lo) or np.any(r > hi):
        raise DomainError("rewards outside [r_min, r_max]")
    return r


# ---------------------------------------------------------------------------
# QoE
# ---------------------------------------------------------------------------

def token_cost_sum(x_in, x_out):
    """sum_{i=0}^{x_out-1} (x_in + i) in closed form."""
    if np.ndim(x_in) == 0 and np.ndim(x_out) == 0:
        x_in, x_out = int(x_in), int(x_out)
        return x_in * x_out + x_out * (x_out - 1) // 2
    x_in = np.asarray(x_in, dtype=float)
    x_out = np.asarray(x_out, dtype=float)
    return x_in * x_out + x_out * (x_out - 1.0) / 2.0


def compute_load(xi, theta_hat, x_in, x_out):
    return xi * np.log(1.0 / np.asarray(theta_hat, dtype=float)) * token_cost_sum(x_in, x_out)


def comm_load(x_in, x_out, snr):
    return BITS_PER_TOKEN * (np.asarray(x_in, dtype=float) + x_out) / np.log2(1.0 + np.asarray(snr, dtype=float))


def qoe(asp: AspParams, d: Demand, ch: Channel, f: float, b: float) -> float:
    if not (f > 0 and b > 0):
        raise DomainError(f"QoE needs positive resources, got f={f}, b={b}")
    a = asp.xi * math.log(1.0 / d.theta_hat) * token_cost_sum(d.x_in, d.x_out)
    c = BITS_PER_TOKEN * (d.x_in + d.x_out) / ch.spectral_efficiency
    return asp.kappa - a / f - c / b


def qoe_matrix(scenario: Scenario, alloc: Allocation) -> np.ndarray:
    f, b = alloc.f, alloc.b
    if np.any(f <= 0) or np.any(b <= 0):
        raise DomainError("QoE needs strictly positive allocations")
    return scenario.kappa[:, None] - scenario.compute_load / f - scenario.comm_load / b


# ---------------------------------------------------------------------------
# utilities
# ---------------------------------------------------------------------------

def asp_utility(scenario: Scenario, n: int, rewards: np.ndarray, alloc: Allocation) -> float:
    if not 0 <= n < scenario.n_asps:
        raise IndexError(f"ASP index {n} out of range")
    f, b = alloc.f[n], alloc.b[n]
    if np.any(f <= 0) or np.any(b <= 0):
        raise DomainError(f"ASP {n} has a nonpositive allocation")
    q = scenario.kappa[n] - scenario.compute_load[n] / f - scenario.comm_load[n] / b
    r = np.asarray(rewards, dtype=float)[n]
    return float(np.sum(r * q - scenario.c_f[n] * f - scenario.c_b[n] * b))


def mu_utility_from_qoe(mu: float, r_col: np.ndarray, q_col: np.ndarray) -> float:
    total = 1.0 + float(np.sum(q_col))
    if total <= 0:
        raise DomainError("1 + sum of QoE is not positive (QoE constraint violated upstream)")
    return mu * math.log(total) - float(np.dot(r_col, q_col))


def mu_utility(scenario: Scenario, m: int, rewards: np.ndarray, alloc: Allocation) -> float:
    if not 0 <= m < scenario.n_mus:
        raise IndexError(f"MU index {m} out of range")
    q = qoe_matrix(scenario, alloc)[:, m]
    return mu_utility_from_qoe(scenario.mu[m], np.asarray(rewards, dtype=float)[:, m], q)


def mu_utilities(scenario: Scenario, rewards: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Vector of MU utilities given an N x M QoE matrix."""
    total = 1.0 + q.sum(axis=0)
    if np.any(total <= 0):
        raise DomainError("1 + sum of QoE is not positive (QoE constraint violated upstream)")
    return scenario.mu * np.log(total) - np.sum(rewards * q, axis=0)


def build_scenario(
    asps: Sequence[AspParams],
    mus: Sequence[MuParams],
    demands: Sequence[Sequence[Demand]],
    channels: Sequence[Sequence[Channel]],
    seed: int | None = None,
    name: str = "",
) -> Scenario:
    return Scenario(tuple(asps), tuple(mus), demands, channels, seed, name)
