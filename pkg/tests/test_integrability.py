"""Tests for Psi/Phi, the Young gap, the quadrature engine and integrability reports"""

import math
import os
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from bsdelab.common import Divergent
from bsdelab.integrability import (
    DIVERGENT,
    FAILED,
    FINITE,
    MONTE_CARLO,
    PATH,
    QUADRATURE,
    UNSTABLE,
    LambdaParam,
    TerminalValue,
    abs_exp_name,
    constant_terminal,
    counterexample_mean,
    counterexample_terminal,
    exp_abs_brownian,
    gauss_expectation,
    integrability_report,
    log_moment_ratio,
    log_psi,
    log_power_name,
    phi,
    power_name,
    psi,
    psi_inverse_substitution,
    psi_name,
    psi_substitution,
    psi_sandwich,
    running_max_terminal,
    signed_exp_name,
    young_gap,
    young_relative_gap,
)
from bsdelab.stochastic_engine import build_grid, sample_brownian


class TestPsiPhi:
    def test_psi_at_zero(self):
        assert psi(1.0, 0.0) == 0.0

    def test_psi_exponent_one(self):
        assert psi(2.0, math.e - 1) == pytest.approx((math.e - 1) * math.e, rel=1e-12)
        assert psi(4.0, math.e ** 2 - 1) == pytest.approx((math.e ** 2 - 1) * math.e, rel=1e-12)
        assert psi(4.0, math.e ** 2 - 1) == pytest.approx(17.36726, rel=1e-6)

    def test_psi_rejects_negative(self):
        with pytest.raises(ValueError):
            psi(1.0, -0.1)

    def test_psi_monotone_and_above_identity(self):
        x = np.linspace(0, 100, 1001)
        values = psi(0.7, x)
        assert np.all(np.diff(values) >= 0)
        assert np.all(values >= x)

    def test_phi_examples(self):
        assert phi(1.0, 1.0) == 1.0
        assert phi(2.0, math.e) == pytest.approx(math.e, rel=1e-14)
        assert phi(2.0, 1 / math.e) == pytest.approx(math.e, rel=1e-14)

    def test_phi_of_exponential(self):
        u = np.linspace(-3, 3, 13)
        assert np.allclose(phi(1.5, np.exp(u)), np.exp(0.75 * u ** 2), rtol=1e-12)

    @pytest.mark.parametrize("x", [0.0, -1.0])
    def test_phi_rejects_non_positive(self, x):
        with pytest.raises(ValueError):
            phi(1.0, x)

    def test_lambda_must_be_positive(self):
        with pytest.raises(ValueError, match="lambda"):
            psi(0.0, 1.0)
        with pytest.raises(ValueError):
            LambdaParam(-1.0)

    def test_lambda_param_sufficiency(self):
        assert LambdaParam(2.0).sufficient is None
        assert LambdaParam(2.0, gamma=0.5, horizon=1.0).sufficient is True
        assert LambdaParam(4.0, gamma=0.5, horizon=1.0).sufficient is False

    @pytest.mark.parametrize("y", [0.5, 3.0, 1e3, 1e8])
    def test_substitution_round_trip(self, y):
        lam = 1.7
        z = psi_inverse_substitution(lam, y)
        assert psi_substitution(lam, z) == pytest.approx(y, rel=1e-12)
        assert psi(lam, y) == pytest.approx(y * math.exp(z), rel=1e-12)


class TestYoungGap:
    def test_examples(self):
        assert young_gap(1.0, 0.0, 0.0) == 1.0
        assert young_gap(2.0, 1.0, 0.0) == pytest.approx(math.e, rel=1e-14)

    def test_relative_matches_direct_where_finite(self):
        lam, x, y = 1.0, 5.0, math.exp(4.5) - 1
        direct = young_gap(lam, x, y)
        scale = max(1.0, phi(lam, math.exp(x)), math.exp(2.0 / lam) * psi(lam, y))
        assert direct >= 0
        assert young_relative_gap(lam, x, y) == pytest.approx(direct / scale, rel=1e-9)

    def test_dense_scan(self):
        lam = np.array([0.1, 0.5, 1.0, 3.0, 10.0])[:, None, None]
        x = np.linspace(-20, 20, 81)[None, :, None]
        y = np.concatenate([[0.0], np.logspace(-6, 8, 60)])[None, None, :]
        assert np.min(young_relative_gap(lam, x, y)) >= -1e-12

    @settings(max_examples=500, deadline=None)
    @given(lam=st.floats(0.1, 10.0), x=st.floats(-20.0, 20.0), y=st.floats(0.0, 1e8))
    def test_inequality_holds(self, lam, x, y):
        assert young_relative_gap(lam, x, y) >= -1e-12

    def test_rejects_negative_y(self):
        with pytest.raises(ValueError):
            young_relative_gap(1.0, 0.0, -1.0)


class TestRemarkSandwich:
    def test_all_zero(self):
        assert psi_sandwich(1.0, 1.0, 1.0, 0.0) == (0.0, 0.0, 0.0)

    def test_increasing_chain(self):
        lower, middle, upper = psi_sandwich(1.0, 0.5, 1.0, 10.0)
        assert lower < middle < upper

    def test_large_argument(self):
        _, middle, upper = psi_sandwich(2.0, 0.1, 1.0, 1e6)
        assert upper / middle >= 1

    def test_eps_from_power(self):
        assert psi_sandwich(1.0, None, 3.0, 5.0) == psi_sandwich(1.0, 2.0, 3.0, 5.0)

    def test_rejects_bad_eps(self):
        with pytest.raises(ValueError):
            psi_sandwich(1.0, None, 1.0, 5.0)
        with pytest.raises(ValueError):
            psi_sandwich(1.0, -0.5, 2.0, 5.0)

    @settings(max_examples=300, deadline=None)
    @given(lam=st.floats(0.1, 10.0), eps=st.floats(0.01, 10.0), x=st.floats(0.0, 1e12))
    def test_chain_holds(self, lam, eps, x):
        lower, middle, upper = psi_sandwich(lam, eps, 1.0, x)
        assert lower <= middle * (1 + 1e-12)
        assert middle <= upper * (1 + 1e-12)

    @pytest.mark.parametrize("p", [1, 2, 3])
    @pytest.mark.parametrize("lam", [1.0, 4.0])
    def test_lower_order_ratio_eventually_increasing(self, p, lam):
        k = np.arange(1, 101)
        ratio = log_moment_ratio(lam, p, 10.0 ** k)
        assert np.all(np.isfinite(ratio))
        assert np.all(np.diff(ratio[49:]) > 0)


class TestGaussExpectation:
    def test_constant(self):
        result = gauss_expectation(lambda x: np.ones_like(x))
        assert result.status == FINITE
        assert abs(result.value - 1.0) < 1e-10

    def test_exponential(self):
        result = gauss_expectation(np.exp)
        assert result.finite
        assert result.value == pytest.approx(math.exp(0.5), rel=1e-9)

    def test_log_mode_matches_linear(self):
        linear = gauss_expectation(lambda x: np.exp(0.3 * np.abs(x)))
        logged = gauss_expectation(log_g=lambda x: 0.3 * np.abs(x))
        assert logged.value == pytest.approx(linear.value, rel=1e-9)

    def test_counterexample_mean(self):
        xi = counterexample_terminal(0.6)
        result = gauss_expectation(log_g=xi.log_abs_at)
        assert result.finite
        assert result.value == pytest.approx(counterexample_mean(0.6), rel=1e-6)
        assert counterexample_mean(0.6) == pytest.approx(0.59207, abs=1e-5)

    def test_counterexample_exponential_moment_diverges(self):
        xi = counterexample_terminal(0.6)
        result = gauss_expectation(log_g=lambda x: xi.log_abs_at(x) + np.abs(x))
        assert result.status == DIVERGENT
        assert abs(result.exponent - 0.4) < 0.05
        assert len(result.values) == 4
        assert all(b > a for a, b in zip(result.values, result.values[1:]))

    def test_counterexample_psi_moment_is_finite(self):
        xi = counterexample_terminal(0.6)
        result = gauss_expectation(log_g=lambda x: log_psi(4.0, xi.log_abs_at(x)))
        assert result.status == FINITE
        # tail decays like e^{-0.1|x|}, so the radius had to be extended
        assert result.radii[-1] > 40

    def test_polynomial_growth_diverges(self):
        result = gauss_expectation(log_g=lambda x: 0.5 * x ** 2)
        assert result.divergent
        assert isinstance(result.cell(), Divergent)
        assert result.cell().evidence['radii'] == [10.0, 20.0, 30.0, 40.0]

    def test_unevaluable_integrand_fails(self):
        result = gauss_expectation(lambda x: np.full_like(x, np.nan))
        assert result.status == FAILED
        assert "evaluated" in result.message

    def test_rejects_bad_radii(self):
        with pytest.raises(ValueError):
            gauss_expectation(np.exp, radii=(10.0,))
        with pytest.raises(ValueError):
            gauss_expectation(np.exp, radii=(20.0, 10.0))

    def test_needs_an_integrand(self):
        with pytest.raises(ValueError):
            gauss_expectation()


class TestIntegrabilityReport:
    def test_constant_terminal(self):
        report = integrability_report(constant_terminal(1.0), lambdas=(2.0,), powers=(1.0, 2.0), gamma=1.0)
        assert report.get(psi_name(2.0)).estimate == pytest.approx(psi(2.0, 1.0), rel=1e-9)
        assert report.get(power_name(2.0)).estimate == pytest.approx(1.0, rel=1e-9)
        assert report.get(log_power_name(1.0)).estimate == pytest.approx(math.log(2.0), rel=1e-9)
        expected = 2 * math.exp(0.5) * norm.cdf(1.0)
        assert report.get(abs_exp_name(1.0)).estimate == pytest.approx(expected, rel=1e-8)
        assert report.get(signed_exp_name(1.0, +1)).estimate == pytest.approx(math.exp(0.5), rel=1e-8)
        assert all(entry.method == QUADRATURE for entry in report.entries)

    def test_counterexample_report(self):
        report = integrability_report(counterexample_terminal(0.6), lambdas=(4.0,), powers=(1.0,),
                                      gamma=1.0)
        assert report.get(power_name(1.0)).estimate == pytest.approx(counterexample_mean(0.6), rel=1e-6)
        assert report.get(psi_name(4.0)).status == FINITE
        necessary = report.get(abs_exp_name(1.0))
        assert necessary.status == DIVERGENT
        assert isinstance(necessary.estimate, Divergent)
        assert abs(necessary.evidence['exponent'] - 0.4) < 0.05

    def test_necessary_entry_always_present(self):
        report = integrability_report(constant_terminal(2.0), lambdas=(), powers=(), gamma=0.5)
        assert report.names()[0] == abs_exp_name(0.5)

    def test_path_terminal_needs_paths(self):
        with pytest.raises(ValueError, match="ensemble"):
            integrability_report(running_max_terminal())

    def test_path_terminal_uses_monte_carlo(self):
        paths = sample_brownian(build_grid(1.0, 20), 1, 20_000, seed=8)
        report = integrability_report(running_max_terminal(), lambdas=(1.0,), powers=(1.0,),
                                      gamma=0.5, paths=paths)
        entry = report.get(power_name(1.0))
        assert entry.method == MONTE_CARLO
        assert entry.status == FINITE
        # E[max W] on a grid sits a little below sqrt(2/pi)
        assert 0.6 < entry.estimate < math.sqrt(2 / math.pi)

    def test_heavy_tail_flagged_unstable(self):
        paths = sample_brownian(build_grid(1.0, 2), 1, 1000, seed=1)

        def spiky(p):
            values = np.ones(p.n_samples)
            values[0] = 1e9
            return values

        xi = TerminalValue(PATH, spiky, description='spiky', nonnegative=True)
        report = integrability_report(xi, lambdas=(), powers=(1.0,), gamma=0.0, paths=paths)
        assert report.get(power_name(1.0)).status == UNSTABLE

    def test_quadrature_agrees_with_monte_carlo(self):
        paths = sample_brownian(build_grid(1.0, 1), 1, 200_000, seed=21)
        quadrature = integrability_report(exp_abs_brownian(0.5), lambdas=(1.0,), powers=(), gamma=0.0)
        mc_xi = TerminalValue(PATH, lambda p: np.exp(0.5 * np.abs(p.terminal()[:, 0])),
                              nonnegative=True)
        mc = integrability_report(mc_xi, lambdas=(1.0,), powers=(), gamma=0.0, paths=paths)
        q_entry, mc_entry = quadrature.get(psi_name(1.0)), mc.get(psi_name(1.0))
        assert abs(q_entry.estimate - mc_entry.estimate) < 4 * mc_entry.error
