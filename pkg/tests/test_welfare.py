"""Closed-form CV, path-ODE integration, path independence, calibration."""

import math

import numpy as np
import pytest

from hedonic_welfare.constants import load_constants
from hedonic_welfare.errors import DegenerateCoefficient, StepFailure, ToleranceNotMet
from hedonic_welfare.hedonic import PolicyChange, QuantileDemandModel, ThetaPath
from hedonic_welfare.oracle import LogLogUtility, oracle_cv
from hedonic_welfare.hedonic import LogLinearSchedule
from hedonic_welfare.welfare import (
    CvSolverSettings,
    calibrate_to_benchmark,
    cv_closed_form,
    cv_path_ode,
    cv_table,
    model_demand_fn,
    path_independence_gap,
)


def random_constrained_case(rng):
    model = QuantileDemandModel.from_constrained(
        tau=0.5,
        r0=float(rng.uniform(-1.0, 6.0)),
        r1=float(rng.uniform(1e-4, 0.02)) * (1 if rng.random() < 0.5 else -1),
        r3=float(rng.uniform(-0.8, 0.8)),
        r4=float(rng.uniform(-0.1, 0.1)),
    )
    change = PolicyChange(
        a1=float(rng.uniform(-100.0, 100.0)),
        a2=float(rng.uniform(5.0, 40.0)),
        b1=float(rng.uniform(-100.0, 100.0)),
        b2=float(rng.uniform(5.0, 40.0)),
        delta0=float(rng.uniform(-2.0, 2.0)),
    )
    y0 = float(rng.uniform(100.0, 900.0))
    return model, change, y0


class TestClosedForm:
    def test_identity_change(self):
        model = QuantileDemandModel.from_constrained(0.5, 2.0, 0.01, -0.3)
        change = PolicyChange(5.0, 12.0, 5.0, 12.0)
        assert cv_closed_form(model, change, 300.0).cv == pytest.approx(0.0, abs=1e-12)

    def test_pure_intercept_shift_is_exact(self):
        rng = np.random.default_rng(20)
        for _ in range(50):
            model, change, y0 = random_constrained_case(rng)
            same_slope = PolicyChange(change.a1, change.a2, change.b1, change.a2, change.delta0)
            res = cv_closed_form(model, same_slope, y0)
            assert res.cv == pytest.approx(change.b1 - change.a1, abs=1e-9)

    def test_slope_doubling_analytic_solution(self):
        # dC/dt = 10 * 0.01 * (100 + C) along the straight path has solution
        # C(t) = 100 (e^{0.1 t} - 1)
        model = QuantileDemandModel.from_constrained(0.5, 0.0, 0.01, 0.0)
        change = PolicyChange(0.0, 10.0, 0.0, 20.0)
        expected = 100.0 * (math.exp(0.1) - 1.0)
        assert expected == pytest.approx(10.5170918076, abs=1e-9)
        assert cv_closed_form(model, change, 100.0).cv == pytest.approx(expected, rel=1e-12)

    def test_benchmark_median_cell(self):
        consts = load_constants()
        model = consts.demand_models[0.5]
        res = cv_closed_form(model, consts.policy, 362.1)
        assert res.cv == pytest.approx(14.06, abs=0.01)

    def test_delta0_enters_through_intercept(self):
        model = QuantileDemandModel.from_constrained(0.5, 1.0, 0.01, -0.2, r4=0.05)
        change = PolicyChange(0.0, 10.0, -5.0, 14.0, delta0=2.0)
        shifted = QuantileDemandModel.from_constrained(0.5, 1.0 + 0.05 * 2.0, 0.01, -0.2, r4=0.0)
        plain_change = PolicyChange(0.0, 10.0, -5.0, 14.0, delta0=0.0)
        assert cv_closed_form(model, change, 250.0).cv == pytest.approx(
            cv_closed_form(shifted, plain_change, 250.0).cv, rel=1e-12
        )

    def test_degenerate_r1_rejected(self):
        model = QuantileDemandModel.from_constrained(0.5, 1.0, 1e-12, -0.2)
        with pytest.raises(DegenerateCoefficient):
            cv_closed_form(model, PolicyChange(0.0, 10.0, 1.0, 12.0), 100.0)

    def test_unconstrained_model_rejected(self):
        model = QuantileDemandModel(tau=0.5, r0=0.0, r1=0.01, r2=0.0, r3=0.0)
        with pytest.raises(ValueError):
            cv_closed_form(model, PolicyChange(0.0, 10.0, 1.0, 12.0), 100.0)

    def test_trace_follows_integrating_factor_solution(self):
        model = QuantileDemandModel.from_constrained(0.5, 0.0, 0.01, 0.0)
        change = PolicyChange(0.0, 10.0, 0.0, 20.0)
        res = cv_closed_form(model, change, 100.0)
        assert res.trace[0][3] == 0.0
        for t, _th1, th2, c in res.trace:
            assert c == pytest.approx(100.0 * (math.exp(0.01 * (th2 - 10.0)) - 1.0), rel=1e-10)

    def test_income_monotonicity(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            model, change, y0 = random_constrained_case(rng)
            lo = cv_closed_form(model, change, y0).cv
            hi = cv_closed_form(model, change, y0 + 10.0).cv
            if model.r1 * (change.b2 - change.a2) > 0:
                assert hi > lo
            elif model.r1 * (change.b2 - change.a2) < 0:
                assert hi < lo


class TestPathOde:
    def test_constant_path_zero(self):
        model = QuantileDemandModel.from_constrained(0.5, 1.0, 0.01, -0.1)
        change = PolicyChange(3.0, 15.0, 3.0, 15.0)
        res = cv_path_ode(model_demand_fn(model), change, 200.0)
        assert res.cv == 0.0
        assert res.error_estimate == 0.0

    def test_matches_analytic_solution(self):
        model = QuantileDemandModel.from_constrained(0.5, 0.0, 0.01, 0.0)
        change = PolicyChange(0.0, 10.0, 0.0, 20.0)
        res = cv_path_ode(model_demand_fn(model), change, 100.0,
                          settings=CvSolverSettings(steps=1000, tolerance=1e-8))
        assert res.cv == pytest.approx(100.0 * (math.exp(0.1) - 1.0), abs=1e-8)

    def test_matches_closed_form_200_random_cases(self):
        rng = np.random.default_rng(22)
        settings = CvSolverSettings(steps=256, tolerance=1e-4)
        for _ in range(200):
            model, change, y0 = random_constrained_case(rng)
            closed = cv_closed_form(model, change, y0)
            ode = cv_path_ode(model_demand_fn(model, change.delta0), change, y0, settings=settings)
            assert abs(closed.cv - ode.cv) <= max(1e-8, 10.0 * ode.error_estimate)

    def test_loglog_demand_matches_oracle(self):
        # utility-generated demand: ln q = (y - th1)/th2 - 1/eta
        eta = 1.0
        change = PolicyChange(0.0, 20.0, 0.0, 25.0)

        def demand(y, theta):
            return math.exp((y - theta[0]) / theta[1] - 1.0 / eta)

        expected = oracle_cv(LogLogUtility(), LogLinearSchedule(0.0, 20.0),
                             LogLinearSchedule(0.0, 25.0), 400.0, eta)
        res = cv_path_ode(demand, change, 400.0, settings=CvSolverSettings(512, 1e-6))
        assert res.cv == pytest.approx(expected, abs=1e-6)
        assert expected == pytest.approx(94.4214112172, abs=1e-9)

    def test_degenerate_r1_limit_against_quadrature(self):
        # with r1 -> 0 the right-hand side loses its C-dependence; the line
        # integral reduces to straight quadrature of theta1' + theta2' ln q
        model = QuantileDemandModel.from_constrained(0.5, 2.0, 1e-12, -0.15, r4=0.1)
        change = PolicyChange(4.0, 9.0, -3.0, 17.0, delta0=1.5)
        r0_eff = 2.0 + 0.1 * 1.5
        analytic = (change.b1 - change.a1) + r0_eff * (change.b2 - change.a2) \
            + (-0.15) * (change.b2 ** 2 - change.a2 ** 2) / 2.0

        # independent oracle: Simpson quadrature of the C-independent field
        ts = np.linspace(0.0, 1.0, 20001)
        th2 = change.a2 + ts * (change.b2 - change.a2)
        integrand = (change.b1 - change.a1) + (change.b2 - change.a2) * (
            r0_eff + 1e-12 * (300.0 - (change.a1 + ts * (change.b1 - change.a1))) - 0.15 * th2
        )
        from numpy import trapz
        quadrature = float(np.trapz(integrand, ts))
        assert quadrature == pytest.approx(analytic, abs=1e-9)

        res = cv_path_ode(model_demand_fn(model, change.delta0), change, 300.0,
                          settings=CvSolverSettings(512, 1e-6))
        assert res.cv == pytest.approx(analytic, abs=1e-6)

    def test_step_failure_on_bad_demand(self):
        def demand(y, theta):
            return -1.0

        with pytest.raises(StepFailure):
            cv_path_ode(demand, PolicyChange(0.0, 10.0, 1.0, 12.0), 100.0)

    def test_tolerance_not_met(self):
        # a wild, fast-oscillating demand surface defeats a 2-step integrator
        def demand(y, theta):
            return math.exp(10.0 * math.sin(50.0 * theta[1]) + 5.0)

        with pytest.raises(ToleranceNotMet):
            cv_path_ode(demand, PolicyChange(0.0, 10.0, 0.0, 30.0), 100.0,
                        settings=CvSolverSettings(steps=2, tolerance=1e-14))

    def test_richardson_estimate_tracks_true_error(self):
        model = QuantileDemandModel.from_constrained(0.5, 0.0, 0.01, 0.0)
        change = PolicyChange(0.0, 10.0, 0.0, 20.0)
        truth = 100.0 * (math.exp(0.1) - 1.0)
        res = cv_path_ode(model_demand_fn(model), change, 100.0,
                          settings=CvSolverSettings(steps=8, tolerance=1.0))
        true_err = abs(res.cv - truth)
        assert true_err <= 10.0 * max(res.error_estimate, 1e-15)


class TestPathIndependence:
    def test_constrained_model_gap_small(self):
        rng = np.random.default_rng(23)
        settings = CvSolverSettings(steps=512, tolerance=1e-4)
        for _ in range(20):
            model, change, y0 = random_constrained_case(rng)
            gap = path_independence_gap(model_demand_fn(model, change.delta0), change, y0, settings)
            assert gap <= 1e-8

    def test_asymmetric_demand_gap_against_analytic(self):
        # ln q = r0 + r1 y ignores theta1, so the field has curl: the two
        # axis orders differ by (C0 + y + r0/r1)(e^{r1 d2} - 1) - d1-term
        r1, y = 0.01, 100.0
        change = PolicyChange(0.0, 10.0, 5.0, 20.0)

        def demand(yy, theta):
            return math.exp(r1 * yy)

        def segment_growth(c0, d_theta2):
            return (c0 + y + 0.0 / r1) * math.exp(r1 * d_theta2) - y + 0.0  # r0 = 0

        theta1_first = segment_growth(5.0, 10.0)
        theta2_first = segment_growth(0.0, 10.0) + 5.0
        analytic_gap = abs(theta1_first - theta2_first)
        assert analytic_gap == pytest.approx(0.5258545904, abs=1e-9)

        settings = CvSolverSettings(steps=512, tolerance=1e-4)
        gap = path_independence_gap(demand, change, y, settings)
        assert gap > 1e-3
        v1 = cv_path_ode(demand, change, y, ThetaPath.axis_first_theta1(change), settings).cv
        v2 = cv_path_ode(demand, change, y, ThetaPath.axis_first_theta2(change), settings).cv
        assert abs(v1 - v2) == pytest.approx(analytic_gap, abs=1e-8)

    def test_loglog_demand_gap_small(self):
        def demand(y, theta):
            return math.exp((y - theta[0]) / theta[1] - 1.0 / 0.8)

        change = PolicyChange(3.0, 20.0, -5.0, 25.0)
        gap = path_independence_gap(demand, change, 400.0, CvSolverSettings(512, 1e-4))
        assert gap <= 1e-8


class TestCvTableAndCalibration:
    def test_single_cell_table(self):
        model = QuantileDemandModel.from_constrained(0.5, 1.0, 0.01, -0.2)
        change = PolicyChange(0.0, 10.0, -3.0, 14.0)
        tbl = cv_table([model], [250.0], change)
        assert tbl.values.shape == (1, 1)
        assert tbl.values[0, 0] == pytest.approx(cv_closed_form(model, change, 250.0).cv)
        rows = tbl.rows()
        assert rows[0][:2] == (0.5, 250.0)

    def test_benchmark_table_shape_and_patterns(self):
        consts = load_constants()
        models = [consts.demand_models[t] for t in consts.quartile_taus]
        tbl = cv_table(models, [276.0, 363.0, 487.0], consts.policy)
        assert np.all(np.diff(tbl.values, axis=1) > 0.0)  # rows rise in income
        assert np.all(np.diff(tbl.values, axis=0) > 0.0)  # columns rise in tau
        assert np.all(tbl.values > 0.0)

    def test_empty_y0_rejected(self):
        model = QuantileDemandModel.from_constrained(0.5, 1.0, 0.01, -0.2)
        with pytest.raises(ValueError):
            cv_table([model], [], PolicyChange(0.0, 10.0, 1.0, 12.0))

    def test_calibration_recovers_income_columns(self):
        consts = load_constants()
        report = calibrate_to_benchmark(consts.demand_models, consts.policy, consts.cv_quartiles)
        # the benchmark's unstated income columns, within 2% of the
        # quartiles implied by the published summary statistics
        for y, expected in zip(report.y_incomes, (275.0, 362.0, 486.0)):
            assert y == pytest.approx(expected, rel=0.02)
        assert report.max_abs_residual <= 0.1
        # the median row is reproduced exactly at the calibrated incomes
        med = list(consts.quartile_taus).index(0.5)
        assert np.allclose(report.residuals[med], 0.0, atol=1e-9)

    def test_round_trip_compounding(self):
        consts = load_constants()
        model = consts.demand_models[0.5]
        y0 = 362.0
        forward = cv_closed_form(model, consts.policy, y0).cv
        backward = cv_closed_form(model, consts.policy.reversed(), y0 + forward).cv
        assert forward + backward == pytest.approx(0.0, abs=1e-6)

    def test_reversed_sign_structure(self):
        consts = load_constants()
        model = consts.demand_models[0.5]
        assert cv_closed_form(model, consts.policy.reversed(), 362.0).cv < 0.0
