"""Tests for the regression and lattice BSDE solvers, oracles and norms"""

import math
import os
import sys

import numpy as np
import pytest
from scipy.stats import norm

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from bsdelab.common import NumericalError
from bsdelab.dual_bound import (GeneratorSpec, abs_z_generator, constant_generator,
                                 sublinear_generator, typical_generator)
from bsdelab.integrability import (abs_brownian, brownian_terminal, clamped_brownian,
                                   constant_terminal, exp_brownian)
from bsdelab.lsmc_solver import (
    BsdeSolution,
    RegressionBasis,
    closed_form_oracle,
    comparison_check,
    mp_norm,
    regress,
    solve,
    solve_lattice,
    sp_norm,
)
from bsdelab.stochastic_engine import build_grid, sample_brownian


def _setup(n_steps=10, n_samples=50_000, seed=5, horizon=1.0):
    grid = build_grid(horizon, n_steps)
    return grid, sample_brownian(grid, 1, n_samples, seed)


def _clamp_oracle(shift, lower=-2.0, upper=2.0):
    """E[clamp(X + shift, lower, upper)] for X ~ N(0, 1)."""
    a, b = lower - shift, upper - shift
    inside = shift * (norm.cdf(b) - norm.cdf(a)) + (norm.pdf(a) - norm.pdf(b))
    return lower * norm.cdf(a) + upper * norm.sf(b) + inside


def _zero_generator():
    return GeneratorSpec(gamma=1.0, driver_func=lambda t, y, z: np.zeros_like(y))


class TestRegressionBasis:
    def test_sizes(self):
        assert RegressionBasis(degree=4).size(1) == 5
        assert RegressionBasis(degree=2).size(2) == 6
        assert RegressionBasis('indicator', bins=8).size(2) == 64

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            RegressionBasis(degree=0)
        with pytest.raises(ValueError):
            RegressionBasis('splines')

    def test_polynomial_design(self):
        states = np.array([[2.0, 3.0]])
        design = RegressionBasis(degree=2).design(states)
        assert sorted(design[0].tolist()) == sorted([1.0, 2.0, 3.0, 4.0, 6.0, 9.0])

    def test_indicator_design_is_one_hot(self):
        states = np.linspace(-5, 5, 101)[:, None]
        design = RegressionBasis('indicator', bins=6).design(states)
        assert np.all(design.sum(axis=1) == 1.0)


class TestRegress:
    def test_equal_states_give_the_mean(self):
        fit = regress(RegressionBasis(), np.zeros((4, 1)), np.array([1.0, 2.0, 3.0, 6.0]))
        assert np.all(fit.fitted == 3.0)
        assert not fit.ridge

    def test_reproduces_polynomial(self):
        x = np.linspace(-2, 2, 200)[:, None]
        target = 1 + 2 * x[:, 0] - x[:, 0] ** 3
        fit = regress(RegressionBasis(degree=3), x, target)
        assert np.allclose(fit.fitted, target, atol=1e-8)

    def test_ridge_on_empty_bins(self):
        x = np.zeros((50, 1))
        x[:25, 0] = -1.0
        x[25:, 0] = 1.0
        fit = regress(RegressionBasis('indicator', bins=10), x, np.ones(50))
        assert fit.ridge
        assert np.allclose(fit.fitted, 1.0, atol=1e-6)


class TestSolve:
    def test_zero_generator_martingale(self):
        grid, paths = _setup()
        solution = solve(brownian_terminal(), _zero_generator(), grid, paths)
        assert abs(solution.y0) < 4 * solution.y0_se
        for i in range(grid.n_steps):
            assert abs(solution.Z[:, i, 0].mean() - 1.0) < 0.08

    def test_zero_generator_mean_of_terminal(self):
        grid, paths = _setup()
        xi = clamped_brownian()
        solution = solve(xi, _zero_generator(), grid, paths)
        assert solution.y0 == pytest.approx(xi.evaluate(paths).mean(), abs=1e-8)

    def test_terminal_exactness(self):
        grid, paths = _setup(n_samples=5000)
        xi = exp_brownian(0.5)
        solution = solve(xi, abs_z_generator(0.5), grid, paths)
        assert np.array_equal(solution.Y[:, -1], xi.evaluate(paths))
        assert solution.Z.shape == (5000, 10, 1)

    def test_constant_drift(self):
        grid, paths = _setup()
        xi = clamped_brownian()
        solution = solve(xi, constant_generator(0.3), grid, paths)
        assert solution.y0 == pytest.approx(xi.evaluate(paths).mean() + 0.3, abs=1e-8)
        assert abs(solution.y0 - 0.3) < 4 * solution.y0_se

    def test_matches_bang_bang_oracle(self):
        grid, paths = _setup(n_steps=50, n_samples=100_000, seed=17)
        solution = solve(clamped_brownian(), abs_z_generator(0.5), grid, paths,
                         RegressionBasis(degree=4))
        oracle = _clamp_oracle(0.5)
        assert abs(solution.y0 - oracle) <= 0.02 * abs(oracle)

    def test_z_sign_for_monotone_terminal(self):
        grid, paths = _setup(n_steps=20, seed=3)
        solution = solve(clamped_brownian(), abs_z_generator(0.5), grid, paths)
        assert np.all(solution.Z[:, :, 0].mean(axis=0) > 0)
        assert np.mean(solution.Z[:, :, 0] < -0.1) < 0.05

    def test_sublinear_smoke(self):
        grid, paths = _setup(n_samples=20_000)
        solution = solve(abs_brownian(), sublinear_generator(0.5, gamma=0.5), grid, paths)
        assert np.all(np.isfinite(solution.Y))
        assert solution.y0 > abs_brownian().evaluate(paths).mean()

    def test_rejects_stiff_beta(self):
        grid, paths = _setup(n_samples=1000)
        with pytest.raises(ValueError, match="contraction"):
            solve(brownian_terminal(), typical_generator(beta=20.0), grid, paths)

    def test_rejects_small_ensemble(self):
        grid, paths = _setup(n_samples=20)
        with pytest.raises(ValueError, match="too few"):
            solve(brownian_terminal(), _zero_generator(), grid, paths)

    def test_rejects_other_grid(self):
        grid, paths = _setup(n_samples=1000)
        with pytest.raises(ValueError, match="grid"):
            solve(brownian_terminal(), _zero_generator(), build_grid(1.0, 20), paths)

    def test_fixed_point_failure_names_node(self):
        grid, paths = _setup(n_samples=1000)
        explosive = GeneratorSpec(gamma=1.0, driver_func=lambda t, y, z: 20.0 * y + 1.0)
        with pytest.raises(NumericalError, match="node 9"):
            solve(brownian_terminal(), explosive, grid, paths)

    def test_ridge_fallback_warns(self, capsys):
        grid, paths = _setup(n_samples=400)
        solution = solve(brownian_terminal(), _zero_generator(), grid, paths,
                         RegressionBasis('indicator', bins=40))
        assert solution.ridge_nodes
        assert "WARNING" in capsys.readouterr().out


class TestLattice:
    def test_matches_oracle(self):
        grid, paths = _setup(n_steps=50, n_samples=1000)
        solution = solve_lattice(clamped_brownian(), abs_z_generator(0.5), grid, paths)
        assert solution.y0 == pytest.approx(_clamp_oracle(0.5), rel=0.01)
        assert solution.y0_se == 0.0
        assert np.array_equal(solution.Y[:, -1], clamped_brownian().evaluate(paths))

    def test_error_shrinks_over_refinement_schedule(self):
        oracle = _clamp_oracle(0.5)
        errors = []
        for n_steps, n_samples in ((25, 1000), (50, 1000), (100, 4000)):
            grid, paths = _setup(n_steps=n_steps, n_samples=n_samples)
            solution = solve_lattice(clamped_brownian(), abs_z_generator(0.5), grid, paths,
                                     spacing=0.005)
            errors.append(abs(solution.y0 - oracle))
        assert errors[0] > errors[1] > errors[2]
        assert errors[1] <= 0.02 * oracle

    def test_zero_generator_is_conditional_mean(self):
        grid, paths = _setup(n_steps=10, n_samples=500)
        solution = solve_lattice(brownian_terminal(), _zero_generator(), grid, paths)
        assert abs(solution.y0) < 1e-6
        assert np.allclose(solution.Z, 1.0, atol=1e-3)

    def test_needs_markovian_one_dimensional(self):
        grid = build_grid(1.0, 4)
        paths = sample_brownian(grid, 2, 100, 1)
        with pytest.raises(ValueError):
            solve_lattice(brownian_terminal(), _zero_generator(), grid, paths)


class TestClosedFormOracle:
    def test_constant_terminal(self):
        gen = typical_generator(alpha=1.0, beta=0.5, gamma=0.5)
        oracle = closed_form_oracle(lambda x: np.full_like(x, 2.0), gen, 1.0)
        expected = 2.0 * math.exp(0.5) + (math.exp(0.5) - 1) / 0.5
        assert oracle(0.0, 0.3) == pytest.approx(expected, rel=1e-9)

    def test_identity_terminal(self):
        oracle = closed_form_oracle(lambda x: x, abs_z_generator(0.5), 1.0)
        assert oracle(0.0, 0.0) == pytest.approx(0.5, abs=1e-9)

    def test_clamped_terminal(self):
        oracle = closed_form_oracle(clamped_brownian(), abs_z_generator(0.5), 1.0)
        assert oracle(0.0, 0.0) == pytest.approx(_clamp_oracle(0.5), rel=1e-7)
        assert oracle(0.0, 0.0) == pytest.approx(0.47270, abs=1e-4)

    def test_rejects_non_monotone(self):
        with pytest.raises(ValueError, match="nondecreasing"):
            closed_form_oracle(np.abs, abs_z_generator(1.0), 1.0)

    def test_rejects_custom_driver(self):
        with pytest.raises(ValueError):
            closed_form_oracle(lambda x: x, constant_generator(1.0), 1.0)


class TestComparison:
    def test_identical_inputs(self):
        grid, paths = _setup(n_samples=5000)
        a = solve(clamped_brownian(), abs_z_generator(0.5), grid, paths)
        b = solve(clamped_brownian(), abs_z_generator(0.5), grid, paths)
        report = comparison_check(a, b, tol=0.0)
        assert report.violations == 0
        assert report.passed

    def test_shifted_terminal_linear_generator(self):
        grid, paths = _setup(n_samples=5000)
        linear = GeneratorSpec(beta=0.5, gamma=1.0, driver_func=lambda t, y, z: 0.5 * y)
        xi = clamped_brownian()
        values = xi.evaluate(paths)
        a = solve(xi, linear, grid, paths, terminal_values=values)
        b = solve(xi, linear, grid, paths, terminal_values=values + 1.0)
        steps_left = grid.n_steps - np.arange(grid.n_steps + 1)
        discrete = (1 - 0.5 * 0.1) ** (-steps_left)
        assert np.allclose(b.Y - a.Y, discrete[None, :], rtol=1e-9)
        assert np.allclose(discrete, np.exp(0.5 * grid.remaining(np.arange(11))), rtol=0.03)

    def test_larger_generator_dominates(self):
        grid, paths = _setup(n_steps=20, n_samples=2000)
        a = solve_lattice(clamped_brownian(), _zero_generator(), grid, paths)
        b = solve_lattice(clamped_brownian(), abs_z_generator(0.5), grid, paths)
        report = comparison_check(a, b, tol=1e-12)
        assert report.violations == 0
        assert report.passed

    def test_larger_generator_dominates_at_start(self):
        grid, paths = _setup(n_samples=20_000)
        a = solve(clamped_brownian(), _zero_generator(), grid, paths)
        b = solve(clamped_brownian(), abs_z_generator(0.5), grid, paths)
        assert b.y0 > a.y0

    def test_rejects_mismatched_ensembles(self):
        grid, paths = _setup(n_samples=1000, seed=1)
        _, other = _setup(n_samples=1000, seed=2)
        a = solve(brownian_terminal(), _zero_generator(), grid, paths)
        b = solve(brownian_terminal(), _zero_generator(), grid, other)
        with pytest.raises(ValueError, match="different"):
            comparison_check(a, b)


class TestNorms:
    def _solution(self, y, z, grid):
        return BsdeSolution(Y=y, Z=z, grid=grid, basis='test', iterations=(), ridge_nodes=(),
                            seed=0, lineage=(), y0_se=0.0)

    def test_constant_y(self):
        grid = build_grid(1.0, 4)
        sol = self._solution(np.full((10, 5), -1.5), np.zeros((10, 4, 1)), grid)
        for p in (1, 2, 3):
            assert sp_norm(sol, p) == pytest.approx(1.5)

    def test_unit_z(self):
        grid = build_grid(1.0, 4)
        sol = self._solution(np.zeros((10, 5)), np.ones((10, 4, 1)), grid)
        assert mp_norm(sol, 2) == pytest.approx(1.0)

    def test_rejects_small_p(self):
        grid = build_grid(1.0, 4)
        sol = self._solution(np.zeros((10, 5)), np.ones((10, 4, 1)), grid)
        with pytest.raises(ValueError):
            sp_norm(sol, 0.5)

    def test_brownian_sup_norm_matches_paths(self):
        grid, paths = _setup(n_steps=20)
        solution = solve(brownian_terminal(), _zero_generator(), grid, paths)
        direct = np.sqrt(np.mean(np.max(np.abs(paths.brownian()[:, :, 0]), axis=1) ** 2))
        assert sp_norm(solution, 2) == pytest.approx(direct, rel=0.02)

    def test_regularity_proxies(self):
        grid, paths = _setup(n_samples=2000)
        solution = solve_lattice(constant_terminal(1.0), _zero_generator(), grid, paths)
        assert solution.max_increment() == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(solution.z_energy(), 0.0, atol=1e-20)
