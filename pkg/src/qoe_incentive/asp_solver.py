"""Best-response resource allocation of a single ASP.

The ASP problem separates over MUs except for the two budget sums, and the
QoE >= 0 constraint only couples f and b of the same MU. With budget prices
c_f + lam_f and c_b + lam_b every MU's optimum has the closed form

    f = sqrt(R_eff * A / (c_f + lam_f)),   b = sqrt(R_eff * C / (c_b + lam_b))

where R_eff = max(R, nu) and nu is the reward at which the MU's QoE would
be exactly zero. The multipliers are found by nested root finding on the
(convex) dual, outer on lam_b and inner on lam_f.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .model import Allocation, DomainError, Scenario

# multipliers are searched as x = log(1 + lam / c); e**X_CAP is far past any
# feasible instance
X_CAP = 200.0


class InfeasibleError(ValueError):
    def __init__(self, message: str, asp: int | None = None, mus: list[int] | None = None):
        super().__init__(message)
        self.asp = asp
        self.mus = list(mus or [])


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class BestResponseConfig:
    multiplier_tol: float = 1e-10
    ascent_tol: float = 1e-8
    max_iters: int = 10_000
    constraint_tol: float = 1e-9
    floor: float = 1e-12

    def __post_init__(self):
        if self.multiplier_tol <= 0 or self.ascent_tol <= 0 or self.constraint_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class BestResponseResult:
    asp: int
    f: np.ndarray
    b: np.ndarray
    qoe: np.ndarray
    utility: float
    f_budget_active: bool
    b_budget_active: bool
    c1_active: np.ndarray
    kkt_residual: float
    lam_f: float = 0.0
    lam_b: float = 0.0
    method: str = "kkt"
    clamped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    certified: bool | None = None

    @property
    def alloc(self) -> np.ndarray:
        """Per-MU (f, b) pairs, shape M x 2."""
        return np.column_stack([self.f, self.b])

    @property
    def active_constraints(self) -> dict:
        return {
            "f_budget": self.f_budget_active,
            "b_budget": self.b_budget_active,
            "c1": self.c1_active.copy(),
        }


def interior_optimum(R, A, C, c_f, c_b):
    """Unconstrained maximiser of R*(kappa - A/f - C/b) - c_f*f - c_b*b."""
    R, A, C = (np.asarray(v, dtype=float) for v in (R, A, C))
    if np.any(R <= 0) or np.any(A <= 0) or np.any(C <= 0) or np.any(np.asarray(c_f) <= 0) or np.any(np.asarray(c_b) <= 0):
        raise DomainError("interior_optimum needs strictly positive inputs")
    f = np.sqrt(R * A / c_f)
    b = np.sqrt(R * C / c_b)
    if f.ndim == 0:
        return float(f), float(b)
    return f, b


class _AspProblem:
    """Arrays of one ASP's problem plus the closed-form response at given prices."""

    def __init__(self, scenario: Scenario, n: int, r_row: np.ndarray, fixed_f=None, fixed_b=None):
        self.n = n
        self.R = np.asarray(r_row, dtype=float)
        self.A = scenario.compute_load[n]
        self.C = scenario.comm_load[n]
        self.kappa = float(scenario.kappa[n])
        self.cf = float(scenario.c_f[n])
        self.cb = float(scenario.c_b[n])
        self.F = float(scenario.f_max[n])
        self.B = float(scenario.b_max[n])
        self.fixed_f = None if fixed_f is None else np.asarray(fixed_f, dtype=float)
        self.fixed_b = None if fixed_b is None else np.asarray(fixed_b, dtype=float)
        if self.fixed_f is not None and self.fixed_b is not None:
            raise ValueError("at most one resource can be fixed")

    def respond(self, xf: float, xb: float):
        """Allocation at price multipliers exp(xf), exp(xb); returns f, b, nu."""
        cf = self.cf * math.exp(xf)
        cb = self.cb * math.exp(xb)
        A, C, R, kappa = self.A, self.C, self.R, self.kappa
        if self.fixed_b is not None:
            head = kappa - C / self.fixed_b
            nu = cf * A / head**2
            r_eff = np.maximum(R, nu)
            return np.sqrt(r_eff * A / cf), self.fixed_b.copy(), nu
        if self.fixed_f is not None:
            head = kappa - A / self.fixed_f
            nu = cb * C / head**2
            r_eff = np.maximum(R, nu)
            return self.fixed_f.copy(), np.sqrt(r_eff * C / cb), nu
        s = np.sqrt(A * cf) + np.sqrt(C * cb)
        nu = (s / kappa) ** 2
        r_eff = np.maximum(R, nu)
        return np.sqrt(r_eff * A / cf), np.sqrt(r_eff * C / cb), nu

    def check_feasible(self, tol: float):
        """Raise InfeasibleError when no allocation meets QoE >= 0 within budgets."""
        A, C, kappa = self.A, self.C, self.kappa
        if self.fixed_b is not None:
            head = kappa - C / self.fixed_b
            bad = np.flatnonzero(head <= 0)
            if bad.size:
                raise InfeasibleError(
                    f"ASP {self.n}: fixed bandwidth alone exceeds the latency budget for MUs {bad.tolist()}",
                    self.n, bad.tolist())
            need = A / head
            if need.sum() > self.F * (1 + tol):
                raise InfeasibleError(
                    f"ASP {self.n}: f_max={self.F:.4g} below the {need.sum():.4g} FLOPS needed for QoE >= 0",
                    self.n, list(range(len(A))))
            return
        if self.fixed_f is not None:
            head = kappa - A / self.fixed_f
            bad = np.flatnonzero(head <= 0)
            if bad.size:
                raise InfeasibleError(
                    f"ASP {self.n}: fixed compute alone exceeds the latency budget for MUs {bad.tolist()}",
                    self.n, bad.tolist())
            need = C / head
            if need.sum() > self.B * (1 + tol):
                raise InfeasibleError(
                    f"ASP {self.n}: b_max={self.B:.4g} below the {need.sum():.4g} Hz needed for QoE >= 0",
                    self.n, list(range(len(A))))
            return
        # frontier of C1-tight allocations parametrised by the price ratio t = p_f / p_b
        if A.sum() / kappa >= self.F * (1 + tol) or C.sum() / kappa >= self.B * (1 + tol):
            raise InfeasibleError(
                f"ASP {self.n}: budgets cannot bring every MU to QoE >= 0",
                self.n, list(range(len(A))))
        AC = np.sqrt(A * C)

        def sum_f(log_t):
            return np.sum(A + AC / math.sqrt(math.exp(log_t))) / kappa

        def sum_b(log_t):
            return np.sum(C + AC * math.sqrt(math.exp(log_t))) / kappa

        lo, hi = -X_CAP, X_CAP
        if sum_f(lo) <= self.F:
            log_t = lo
        else:
            log_t = brentq(lambda x: sum_f(x) - self.F, lo, hi, xtol=1e-12)
        if sum_b(log_t) > self.B * (1 + tol):
            # list MUs that could not be served even with the whole budget to themselves
            alone = np.flatnonzero(
                (A + AC * np.sqrt(self.B / np.maximum(C, 1e-300))) / kappa > self.F)
            mus = alone.tolist() or list(range(len(A)))
            raise InfeasibleError(
                f"ASP {self.n}: budgets cannot bring every MU to QoE >= 0 "
                f"(bandwidth load {sum_b(log_t) / self.B:.3f} at the compute limit)",
                self.n, mus)


def _root_decreasing(fn, target: float, tol: float) -> float:
    """Smallest x >= 0 with fn(x) <= target for a decreasing fn."""
    if fn(0.0) <= target:
        return 0.0
    hi = 1.0
    while fn(hi) > target:
        hi *= 2.0
        if hi > X_CAP:
            raise InfeasibleError("multiplier search diverged")
    return brentq(lambda x: fn(x) - target, 0.0, hi, xtol=tol, rtol=4 * np.finfo(float).eps)


def _decoupled_multipliers(p: _AspProblem) -> tuple[float, float]:
    """Closed-form multipliers assuming no MU sits on QoE = 0.

    Without C1 the f and b water-fillings are independent and each has an
    explicit price: sum_m sqrt(R A_m / c) = F solves to c = (sum sqrt(R A) / F)**2.
    """
    def one(load, cost, cap):
        demand = float(np.sum(np.sqrt(p.R * load / cost)))
        return 0.0 if demand <= cap else 2.0 * math.log(demand / cap)

    xf = 0.0 if p.fixed_f is not None else one(p.A, p.cf, p.F)
    xb = 0.0 if p.fixed_b is not None else one(p.C, p.cb, p.B)
    return xf, xb


def _solve_multipliers(p: _AspProblem, tol: float, constraint_tol: float) -> tuple[float, float]:
    if np.all(p.R > 0):
        xf, xb = _decoupled_multipliers(p)
        if np.all(p.respond(xf, xb)[2] <= p.R):
            return xf, xb
    p.check_feasible(constraint_tol)
    if p.fixed_b is not None:
        return _root_decreasing(lambda x: p.respond(x, 0.0)[0].sum(), p.F, tol), 0.0
    if p.fixed_f is not None:
        return 0.0, _root_decreasing(lambda x: p.respond(0.0, x)[1].sum(), p.B, tol)

    def inner(xb):
        return _root_decreasing(lambda x: p.respond(x, xb)[0].sum(), p.F, tol)

    def sum_b(xb):
        return p.respond(inner(xb), xb)[1].sum()

    xb = _root_decreasing(sum_b, p.B, tol)
    return inner(xb), xb


def _kkt_residual(p: _AspProblem, f, b, q, xf, xb, nu, tol) -> float:
    terms = [0.0]
    r_eff = np.maximum(p.R, nu)
    cf = p.cf * math.exp(xf)
    cb = p.cb * math.exp(xb)
    if p.fixed_f is None:
        live = p.A > 0
        if np.any(live):
            terms.append(np.max(np.abs(r_eff[live] * p.A[live] / f[live] ** 2 - cf) / cf))
        terms.append(max(0.0, f.sum() / p.F - 1.0 - tol))
        if xf > 0:
            terms.append(abs(1.0 - f.sum() / p.F))
    if p.fixed_b is None:
        live = p.C > 0
        if np.any(live):
            terms.append(np.max(np.abs(r_eff[live] * p.C[live] / b[live] ** 2 - cb) / cb))
        terms.append(max(0.0, b.sum() / p.B - 1.0 - tol))
        if xb > 0:
            terms.append(abs(1.0 - b.sum() / p.B))
    terms.append(float(np.max(np.maximum(0.0, -q / p.kappa - tol))))
    omega = r_eff - p.R
    terms.append(float(np.max(omega / r_eff * np.abs(q) / p.kappa)))
    return float(max(terms))


def _utility(p: _AspProblem, f, b, q) -> float:
    return float(np.sum(p.R * q - p.cf * f - p.cb * b))


def best_response(
    scenario: Scenario,
    n: int,
    rewards: np.ndarray,
    cfg: BestResponseConfig | None = None,
    *,
    fixed_f: np.ndarray | None = None,
    fixed_b: np.ndarray | None = None,
    certify: bool = False,
) -> BestResponseResult:
    """Unique utility-maximising allocation of ASP ``n`` for the given rewards.

    ``fixed_f`` / ``fixed_b`` pin one resource per MU (used by the single-resource
    baselines). With ``certify`` the result is checked against the brute-force
    oracle (desk scale only, at most three MUs).
    """
    cfg = cfg or BestResponseConfig()
    if not 0 <= n < scenario.n_asps:
        raise IndexError(f"ASP index {n} out of range")
    r_row = np.asarray(rewards, dtype=float)[n]
    if np.any(r_row < 0):
        raise DomainError("rewards must be non-negative")
    p = _AspProblem(scenario, n, r_row, fixed_f, fixed_b)
    xf, xb = _solve_multipliers(p, cfg.multiplier_tol, cfg.constraint_tol)
    f, b, nu = p.respond(xf, xb)
    clamped = (f < cfg.floor) | (b < cfg.floor)
    f = np.maximum(f, cfg.floor)
    b = np.maximum(b, cfg.floor)
    q = p.kappa - p.A / f - p.C / b
    residual = _kkt_residual(p, f, b, q, xf, xb, nu, cfg.constraint_tol)
    method = "kkt"
    if residual > cfg.ascent_tol:
        f0 = 0.5 * (f + p.F / f.size) if fixed_f is None else f
        b0 = 0.5 * (b + p.B / b.size) if fixed_b is None else b
        f, b, residual = projected_ascent(scenario, n, rewards, f0, b0, cfg, fixed_f=fixed_f, fixed_b=fixed_b)
        q = p.kappa - p.A / f - p.C / b
        method = "ascent"
        if residual > cfg.ascent_tol:
            raise ConvergenceError(
                f"ASP {n}: best response did not converge (residual {residual:.3e})", residual)
    result = BestResponseResult(
        asp=n,
        f=f,
        b=b,
        qoe=q,
        utility=_utility(p, f, b, q),
        f_budget_active=bool(xf > 0 or f.sum() >= p.F * (1 - cfg.constraint_tol)),
        b_budget_active=bool(xb > 0 or b.sum() >= p.B * (1 - cfg.constraint_tol)),
        c1_active=np.asarray(nu > p.R),
        kkt_residual=residual,
        lam_f=p.cf * math.expm1(xf),
        lam_b=p.cb * math.expm1(xb),
        method=method,
        clamped=clamped,
    )
    if certify:
        from .oracle import GridSpec, grid_best_response

        _, oracle_u = grid_best_response(scenario, n, rewards, GridSpec(), fixed_f=fixed_f, fixed_b=fixed_b)
        result.certified = result.utility >= oracle_u - 0.01 * abs(oracle_u)
    return result


def qoe_at(result: BestResponseResult, scenario: Scenario, n: int, rewards: np.ndarray) -> np.ndarray:
    """Per-MU QoE delivered by ASP ``n`` at a best-response allocation."""
    return scenario.kappa[n] - scenario.compute_load[n] / result.f - scenario.comm_load[n] / result.b


def respond_all(
    scenario: Scenario,
    rewards: np.ndarray,
    cfg: BestResponseConfig | None = None,
    fixed_f: np.ndarray | None = None,
    fixed_b: np.ndarray | None = None,
) -> tuple[list[BestResponseResult], Allocation]:
    """Best responses of every ASP; ``fixed_f``/``fixed_b`` are N x M when given."""
    results = [
        best_response(
            scenario, n, rewards, cfg,
            fixed_f=None if fixed_f is None else fixed_f[n],
            fixed_b=None if fixed_b is None else fixed_b[n],
        )
        for n in range(scenario.n_asps)
    ]
    alloc = Allocation(np.array([r.f for r in results]), np.array([r.b for r in results]))
    return results, alloc


# ---------------------------------------------------------------------------
# fallback: projected gradient ascent
# ---------------------------------------------------------------------------

def _project_capped_simplex(v: np.ndarray, lo: float) -> np.ndarray:
    """Euclidean projection onto {z >= lo, sum(z) <= 1}."""
    y = np.maximum(v, lo)
    if y.sum() <= 1.0:
        return y
    w = v - lo
    cap = 1.0 - lo * v.size
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - cap
    idx = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / idx > 0)[-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(w - tau, 0.0) + lo


def projected_ascent(
    scenario: Scenario,
    n: int,
    rewards: np.ndarray,
    f0: np.ndarray,
    b0: np.ndarray,
    cfg: BestResponseConfig | None = None,
    *,
    fixed_f: np.ndarray | None = None,
    fixed_b: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Projected gradient ascent with Barzilai-Borwein steps in budget-normalised coordinates.

    QoE >= 0 is handled with a log barrier whose weight is driven towards zero
    over a few stages; budgets are handled by exact projection. The start must
    have strictly positive QoE for every MU. Returns (f, b, residual), where the
    residual is the projected-gradient norm of the last stage.
    """
    cfg = cfg or BestResponseConfig()
    p = _AspProblem(scenario, n, np.asarray(rewards, dtype=float)[n], fixed_f, fixed_b)
    m = p.R.size
    free_f = fixed_f is None
    free_b = fixed_b is None
    lo_f = cfg.floor / p.F
    lo_b = cfg.floor / p.B
    scale = float(np.sum(p.R) * p.kappa) or p.kappa

    def unpack(z):
        f = z[:m] * p.F if free_f else p.fixed_f
        b = z[m:] * p.B if free_b else p.fixed_b
        return f, b

    def value(z, tau):
        f, b = unpack(z)
        q = p.kappa - p.A / f - p.C / b
        if np.any(q <= 0):
            return -np.inf
        return _utility(p, f, b, q) + tau * float(np.sum(np.log(q / p.kappa)))

    def grad(z, tau):
        f, b = unpack(z)
        q = p.kappa - p.A / f - p.C / b
        w = p.R + tau / q
        gf = p.F * (w * p.A / f**2 - p.cf) if free_f else np.zeros(m)
        gb = p.B * (w * p.C / b**2 - p.cb) if free_b else np.zeros(m)
        return np.concatenate([gf, gb])

    def project(z):
        zf = _project_capped_simplex(z[:m], lo_f) if free_f else z[:m]
        zb = _project_capped_simplex(z[m:], lo_b) if free_b else z[m:]
        return np.concatenate([zf, zb])

    z = project(np.concatenate([np.asarray(f0, float) / p.F, np.asarray(b0, float) / p.B]))
    if not np.isfinite(value(z, 0.0)):
        raise InfeasibleError(f"ASP {n}: ascent start violates QoE > 0", n)
    budget = cfg.max_iters
    residual = np.inf
    taus = (1e-4 * scale, 1e-7 * scale, 1e-10 * scale, 1e-13 * scale)
    for stage, tau in enumerate(taus):
        tol = cfg.ascent_tol if stage == len(taus) - 1 else math.sqrt(cfg.ascent_tol)
        g = grad(z, tau)
        u = value(z, tau)
        step = 1e-3
        while budget > 0:
            budget -= 1
            residual = float(np.max(np.abs(project(z + g / scale) - z)))
            if residual <= tol:
                break
            alpha = step
            for _ in range(60):
                z_new = project(z + alpha * g)
                u_new = value(z_new, tau)
                if u_new >= u + 1e-4 * np.dot(g, z_new - z):
                    break
                alpha *= 0.5
            else:
                break
            g_new = grad(z_new, tau)
            s, y = z_new - z, g_new - g
            sy = float(np.dot(s, y))
            step = float(np.dot(s, s)) / -sy if sy < 0 else 1.0
            step = min(max(step, 1e-16), 1e6)
            z, g, u = z_new, g_new, u_new
    f, b = unpack(z)
    return f.copy(), b.copy(), residual
