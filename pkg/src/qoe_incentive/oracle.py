"""Brute-force verifiers: grid best response, grid NE search, numeric Hessian.

The grid best response depends on ``model`` only. It places every MU's f and
b on a uniform grid and maximises the separable utility under both budgets by
an exact max-plus convolution over budget levels, then zooms in around the
argmax a few times.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import Allocation, DomainError, Scenario, mu_utilities


class OracleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    points_per_axis: int = 64
    refine_passes: int = 4
    zoom_cells: float = 2.0     # half-width of each refinement window in parent cells
    max_mus: int = 3
    f_bounds: tuple[float, float] | None = None
    b_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.points_per_axis < 2:
            raise ValueError("points_per_axis must be >= 2")
        if self.refine_passes < 0:
            raise ValueError("refine_passes must be >= 0")
        for bounds in (self.f_bounds, self.b_bounds):
            if bounds is not None and not 0 < bounds[0] < bounds[1]:
                raise ValueError("bounds must be positive and ordered")


def _maxplus(acc: np.ndarray, table: np.ndarray):
    """Max-plus convolution of two 2-D level tables; returns (values, choice_i, choice_j)."""
    a1, a2 = acc.shape
    t1, t2 = table.shape
    out = np.full((a1 + t1 - 1, a2 + t2 - 1), -np.inf)
    ci = np.zeros(out.shape, dtype=np.int64)
    cj = np.zeros(out.shape, dtype=np.int64)
    for i in range(t1):
        for j in range(t2):
            if not np.isfinite(table[i, j]):
                continue
            cand = acc + table[i, j]
            view = out[i:i + a1, j:j + a2]
            better = cand > view
            view[better] = cand[better]
            ci[i:i + a1, j:j + a2][better] = i
            cj[i:i + a1, j:j + a2][better] = j
    return out, ci, cj


def _solve_levels(R, A, C, kappa, cf, cb, f_grid, b_grid, cap_f, cap_b):
    """Exact max over per-MU grid choices with sum(level_f) <= cap_f, sum(level_b) <= cap_b.

    f_grid[m] / b_grid[m] are arrays of candidate values whose k-th entry costs
    k budget levels. Returns (utility, f, b) or (-inf, None, None).
    """
    m_count = len(R)
    tables = []
    for m in range(m_count):
        f = f_grid[m][:, None]
        b = b_grid[m][None, :]
        q = kappa - A[m] / f - C[m] / b
        u = R[m] * q - cf * f - cb * b
        tables.append(np.where(q >= 0, u, -np.inf))
    acc = tables[0]
    back = []
    for t in tables[1:]:
        acc, ci, cj = _maxplus(acc, t)
        back.append((ci, cj))
    lim_f = min(acc.shape[0] - 1, cap_f)
    lim_b = min(acc.shape[1] - 1, cap_b)
    if lim_f < 0 or lim_b < 0:
        return -np.inf, None, None
    window = acc[: lim_f + 1, : lim_b + 1]
    flat = int(np.argmax(window))
    i, j = np.unravel_index(flat, window.shape)
    best = window[i, j]
    if not np.isfinite(best):
        return -np.inf, None, None
    picks = []
    for ci, cj in reversed(back):
        pi, pj = ci[i, j], cj[i, j]
        picks.append((pi, pj))
        i, j = i - pi, j - pj
    picks.append((i, j))
    picks.reverse()
    f = np.array([f_grid[m][picks[m][0]] for m in range(m_count)])
    b = np.array([b_grid[m][picks[m][1]] for m in range(m_count)])
    return float(best), f, b


def grid_best_response(
    scenario: Scenario,
    n: int,
    rewards: np.ndarray,
    grid: GridSpec | None = None,
    *,
    fixed_f: np.ndarray | None = None,
    fixed_b: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """Brute-force best response of ASP ``n``; returns (M x 2 array of (f, b), utility).

    Budget-violating grid points are skipped. Raises OracleSizeError for
    more than ``grid.max_mus`` MUs and DomainError when no grid point is feasible.
    """
    grid = grid or GridSpec()
    m_count = scenario.n_mus
    if m_count > grid.max_mus:
        raise OracleSizeError(f"grid oracle handles at most {grid.max_mus} MUs, got {m_count}")
    R = np.asarray(rewards, dtype=float)[n]
    A = scenario.compute_load[n]
    C = scenario.comm_load[n]
    kappa = float(scenario.kappa[n])
    cf, cb = float(scenario.c_f[n]), float(scenario.c_b[n])
    F, B = float(scenario.f_max[n]), float(scenario.b_max[n])
    g = grid.points_per_axis

    def axis(fixed, cap, bounds):
        """Initial grids (list per MU), level step and level cap for one resource."""
        if fixed is not None:
            vals = [np.array([float(v)]) for v in np.asarray(fixed, dtype=float)]
            return vals, None, 0
        lo, hi = bounds if bounds is not None else (cap / g, cap)
        step = (hi - lo) / (g - 1)
        vals = [lo + step * np.arange(g) for _ in range(m_count)]
        return vals, step, int(np.floor((cap - m_count * lo) / step + 1e-9))

    f_vals, f_step, f_cap = axis(fixed_f, F, grid.f_bounds)
    b_vals, b_step, b_cap = axis(fixed_b, B, grid.b_bounds)
    best, f, b = _solve_levels(R, A, C, kappa, cf, cb, f_vals, b_vals, f_cap, b_cap)
    if f is None:
        raise DomainError(f"ASP {n}: no feasible grid point (grid too coarse or instance infeasible)")

    for _ in range(grid.refine_passes):
        def zoom(current, step, cap, fixed):
            if fixed is not None:
                return [np.array([v]) for v in current], step, 0
            half = max((g - 1) // 2, 1)
            new_step = grid.zoom_cells * step / half
            # the previous argmax sits exactly on the new grid
            base = current - half * new_step
            base = np.where(base > 0, base, current - np.floor(current / new_step - 1e-9) * new_step)
            vals = [base[m] + new_step * np.arange(g) for m in range(m_count)]
            return vals, new_step, int(np.floor((cap - base.sum()) / new_step + 1e-9))

        fz, fs, fc = zoom(f, f_step, F, fixed_f)
        bz, bs, bc = zoom(b, b_step, B, fixed_b)
        cand, f2, b2 = _solve_levels(R, A, C, kappa, cf, cb, fz, bz, fc, bc)
        if f2 is None or cand < best:
            break
        best, f, b, f_step, b_step = cand, f2, b2, fs, bs
    return np.column_stack([f, b]), best


def _ne_mask(utils: list[np.ndarray], n_asps: int, n_mus: int, tol: float) -> np.ndarray:
    """Points where no MU gains by changing its own reward column."""
    ok = np.ones(utils[0].shape, dtype=bool)
    for m in range(n_mus):
        own_axes = tuple(n * n_mus + m for n in range(n_asps))
        best_dev = np.max(utils[m], axis=own_axes, keepdims=True)
        scale = max(1.0, float(np.max(np.abs(utils[m]))))
        ok &= utils[m] >= best_dev - tol * scale
    return ok


def grid_ne_search(
    scenario: Scenario,
    reward_grid: GridSpec | int = 11,
    *,
    inner: str = "solver",
    tol: float = 1e-12,
) -> list[np.ndarray]:
    """All reward matrices on a product grid at which no MU can gain by a grid deviation.

    ``reward_grid`` gives the points per reward axis (a GridSpec or an int).
    ``inner`` selects the ASP response: "solver" (asp_solver) or "grid"
    (grid_best_response, slow).
    """
    g = reward_grid.points_per_axis if isinstance(reward_grid, GridSpec) else int(reward_grid)
    n_asps, n_mus = scenario.shape
    if n_asps > 2 or n_mus > 2:
        raise OracleSizeError("grid_ne_search handles at most 2 ASPs and 2 MUs")
    if g > 50:
        raise OracleSizeError("grid_ne_search handles at most 50 points per axis")
    levels = [np.unique(np.linspace(scenario.r_min[m], scenario.r_max[m], g)) for m in range(n_mus)]
    sizes = [len(lv) for lv in levels]

    if inner == "solver":
        from .asp_solver import best_response

        def respond(n, r_full):
            res = best_response(scenario, n, r_full)
            return res.f, res.b
    elif inner == "grid":
        def respond(n, r_full):
            alloc, _ = grid_best_response(scenario, n, r_full)
            return alloc[:, 0], alloc[:, 1]
    else:
        raise ValueError(f"unknown inner solver {inner!r}")

    # QoE of ASP n's MUs as a function of ASP n's reward row
    q_rows = []
    for n in range(n_asps):
        q = np.empty(tuple(sizes) + (n_mus,))
        for idx in itertools.product(*(range(s) for s in sizes)):
            r_full = scenario.midpoint_rewards()
            r_full[n] = [levels[m][idx[m]] for m in range(n_mus)]
            f, b = respond(n, r_full)
            q[idx] = scenario.kappa[n] - scenario.compute_load[n] / f - scenario.comm_load[n] / b
        q_rows.append(q)

    # full tensors over axes ordered (n, m) row-major
    full_shape = tuple(sizes[m] for n in range(n_asps) for m in range(n_mus))
    utils = []
    for m in range(n_mus):
        total_q = np.zeros(full_shape)
        paid = np.zeros(full_shape)
        for n in range(n_asps):
            shape = [1] * (n_asps * n_mus)
            for mm in range(n_mus):
                shape[n * n_mus + mm] = sizes[mm]
            qn = q_rows[n][..., m].reshape(shape)
            rshape = [1] * (n_asps * n_mus)
            rshape[n * n_mus + m] = sizes[m]
            rn = levels[m].reshape(rshape)
            total_q = total_q + qn
            paid = paid + rn * qn
        utils.append(scenario.mu[m] * np.log1p(total_q) - paid)

    mask = _ne_mask(utils, n_asps, n_mus, tol)
    out = []
    for idx in zip(*np.nonzero(mask)):
        r = np.empty((n_asps, n_mus))
        for n in range(n_asps):
            for m in range(n_mus):
                r[n, m] = levels[m][idx[n * n_mus + m]]
        out.append(r)
    return out


def numeric_hessian(
    fn: Callable[[np.ndarray], float],
    point,
    h: float | np.ndarray | None = None,
) -> np.ndarray:
    """Central-difference Hessian of a scalar field; steps default to 1e-4 * max(|x|, 1)."""
    x = np.asarray(point, dtype=float)
    k = x.size
    if h is None:
        steps = 1e-4 * np.maximum(np.abs(x), 1.0)
    else:
        steps = np.broadcast_to(np.asarray(h, dtype=float), (k,)).copy()
    f0 = fn(x)
    H = np.empty((k, k))
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = steps[i]
        H[i, i] = (fn(x + ei) - 2.0 * f0 + fn(x - ei)) / steps[i] ** 2
        for j in range(i + 1, k):
            ej = np.zeros(k)
            ej[j] = steps[j]
            H[i, j] = H[j, i] = (
                fn(x + ei + ej) - fn(x + ei - ej) - fn(x - ei + ej) + fn(x - ei - ej)
            ) / (4.0 * steps[i] * steps[j])
    return H


def mu_utilities_at(scenario: Scenario, rewards: np.ndarray, alloc: Allocation) -> np.ndarray:
    """MU utility vector for an explicit allocation (no solver involved)."""
    q = scenario.kappa[:, None] - scenario.compute_load / alloc.f - scenario.comm_load / alloc.b
    return mu_utilities(scenario, rewards, q)
