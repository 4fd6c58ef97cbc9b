import ast
import inspect
import itertools

import numpy as np
import pytest

import qoe_incentive.oracle as oracle_mod
from qoe_incentive.asp_solver import interior_optimum
from qoe_incentive.config import Calibration
from qoe_incentive.harness import generate_scenario
from qoe_incentive.model import MuParams, Scenario
from qoe_incentive.mu_game import GameConfig, StepSchedule, run_game
from qoe_incentive.oracle import (
    GridSpec,
    OracleSizeError,
    grid_best_response,
    grid_ne_search,
    numeric_hessian,
)

from .conftest import single_pair


def test_module_level_imports_only_model():
    tree = ast.parse(inspect.getsource(oracle_mod))
    local = [node.module for node in tree.body if isinstance(node, ast.ImportFrom) and node.level]
    assert local == ["model"]


class TestGridBestResponse:
    def test_single_mu_slack_matches_closed_form(self):
        s = single_pair()
        r = np.array([[0.25]])
        alloc, _ = grid_best_response(s, 0, r)
        f, b = interior_optimum(0.25, s.compute_load[0, 0], s.comm_load[0, 0], s.c_f[0], s.c_b[0])
        coarse_f, coarse_b = s.f_max[0] / 63, s.b_max[0] / 63
        assert abs(alloc[0, 0] - f) <= coarse_f
        assert abs(alloc[0, 1] - b) <= coarse_b

    def test_two_points_returns_best_corner(self, small_market):
        s = small_market.with_asp(0, f_max=4e12, b_max=2e8)
        one = Scenario(s.asps[:1], s.mus[:1], [s.demands[0][:1]], [s.channels[0][:1]])
        r = np.array([[0.5]])
        alloc, u = grid_best_response(one, 0, r, GridSpec(points_per_axis=2, refine_passes=0))
        corners = []
        for f, b in itertools.product([2e12, 4e12], [1e8, 2e8]):
            q = one.kappa[0] - one.compute_load[0, 0] / f - one.comm_load[0, 0] / b
            corners.append((0.5 * q - one.c_f[0] * f - one.c_b[0] * b, f, b))
        best = max(corners)
        assert u == pytest.approx(best[0], rel=1e-12)
        assert alloc[0, 0] == best[1] and alloc[0, 1] == best[2]

    def test_respects_budgets(self, small_market):
        s = small_market.with_asp(0, f_max=6e11, b_max=3e7)
        alloc, _ = grid_best_response(s, 0, s.midpoint_rewards())
        assert alloc[:, 0].sum() <= 6e11 * (1 + 1e-12)
        assert alloc[:, 1].sum() <= 3e7 * (1 + 1e-12)

    def test_too_many_mus(self):
        s = generate_scenario(0, 1, 4)
        with pytest.raises(OracleSizeError):
            grid_best_response(s, 0, s.midpoint_rewards())

    def test_deterministic(self, small_market):
        r = small_market.midpoint_rewards()
        a1, u1 = grid_best_response(small_market, 1, r)
        a2, u2 = grid_best_response(small_market, 1, r)
        assert u1 == u2 and np.array_equal(a1, a2)

    def test_gridspec_validation(self):
        with pytest.raises(ValueError):
            GridSpec(points_per_axis=1)
        with pytest.raises(ValueError):
            GridSpec(f_bounds=(2.0, 1.0))


def narrow(seed, n, m, r_max=0.2):
    return generate_scenario(seed, n, m, calibration=Calibration(r_max=r_max))


class TestGridNe:
    def test_single_agent_singleton(self):
        s = narrow(5, 1, 1)
        points = grid_ne_search(s, 41)
        assert 1 <= len(points) <= 2
        cell = (s.r_max[0] - s.r_min[0]) / 40
        assert np.ptp([p[0, 0] for p in points]) <= cell + 1e-15

    @pytest.mark.parametrize("seed", range(3))
    def test_game_lands_next_to_grid_ne(self, seed):
        s = narrow(seed, 2, 2)
        points = grid_ne_search(s, 21)
        assert points
        rep = run_game(s, GameConfig(schedule=StepSchedule("diminishing", 0.05), certify=False))
        cell = (s.r_max[0] - s.r_min[0]) / 20
        gaps = [np.max(np.abs(p - rep.rewards)) for p in points]
        assert min(gaps) <= 1.5 * cell

    def test_degenerate_bounds(self):
        s = narrow(1, 1, 2)
        fixed = Scenario(s.asps, [MuParams(3.0, 0.05, 0.05)] * 2, s.demands, s.channels)
        points = grid_ne_search(fixed, 7)
        assert len(points) == 1
        assert np.allclose(points[0], 0.05)

    def test_size_limits(self):
        with pytest.raises(OracleSizeError):
            grid_ne_search(generate_scenario(0, 3, 1), 5)
        with pytest.raises(OracleSizeError):
            grid_ne_search(generate_scenario(0, 1, 1), 51)


class TestNumericHessian:
    def test_quadratic(self):
        H = numeric_hessian(lambda x: -x[0] ** 2 - x[1] ** 2, [0.3, -1.2])
        assert np.allclose(H, np.diag([-2.0, -2.0]), atol=1e-6)

    def test_symmetric_mixed(self):
        H = numeric_hessian(lambda x: np.sin(x[0]) * x[1] ** 2 + x[0] * x[2], [0.4, 1.1, -0.7], 1e-4)
        assert np.allclose(H, H.T, rtol=1e-6, atol=0)
        assert H[0, 1] == pytest.approx(2 * np.cos(0.4) * 1.1, rel=1e-6)
        assert H[0, 2] == pytest.approx(1.0, rel=1e-6)
