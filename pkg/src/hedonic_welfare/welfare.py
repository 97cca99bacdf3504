"""Compensating variation of a frontier movement, by closed form and by ODE.

The compensating variation C(y) of a movement of (theta1, theta2) from a to
b solves, along any path theta(t) with theta(0)=a, theta(1)=b,

    dC/dt = theta1'(t) + theta2'(t) * ln q(y + C, theta(t)),   C(0) = 0,

the log-linear-frontier case of dC/dt = sum_j theta_j'(t) * dP/d theta_j
evaluated at optimal demand.  For the constrained log-linear demand model
(r2 = -r1) the integrating-factor solution is the path-independent closed
form

    C = e^{r1 (b2-a2)} * {r0/r1 + y + a2 r3/r1 + r3/r1^2 - a1}
        + b1 - r0/r1 - y - r3 b2/r1 - r3/r1^2,

with r0 replaced by r0 + r4*delta0.  The ODE route needs no symmetry and is
used both as a cross-check and for demand surfaces with no closed form; the
integrator is classical fixed-step RK4 run at N and 2N steps with a
Richardson error estimate |C_N - C_2N| / 15 (reproducible step sequences,
no adaptivity).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateCoefficient,
    DomainError,
    StepFailure,
    ToleranceNotMet,
)
from .hedonic import PolicyChange, QuantileDemandModel, ThetaPath

__all__ = [
    "CvSolverSettings",
    "CvResult",
    "CvTable",
    "CalibrationReport",
    "cv_closed_form",
    "cv_path_ode",
    "path_independence_gap",
    "cv_table",
    "calibrate_to_benchmark",
    "model_demand_fn",
]

R1_DEGENERATE = 1e-10
PATH_FAMILIES = ("straight-line", "axis-first-theta1", "axis-first-theta2")


@dataclass(frozen=True)
class CvSolverSettings:
    """Fixed-step integrator settings."""

    steps: int = 256
    tolerance: float = 1e-6

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError(f"step count must be at least 2, got {self.steps}")
        if not self.tolerance > 0.0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")


@dataclass(frozen=True)
class CvResult:
    """CV in GBP/week plus the (t, theta(t), C(t)) trace that produced it."""

    cv: float
    method: str  # "closed-form" | "path-ode"
    trace: tuple[tuple[float, float, float, float], ...]
    error_estimate: float

    def __post_init__(self):
        if self.trace and self.trace[0][3] != 0.0:
            raise ValueError("trace must start at C(0) = 0")
        if not math.isfinite(self.error_estimate):
            raise ValueError("error estimate must be finite")


def _effective_r0(model: QuantileDemandModel, delta0):
    return model.r0 + model.r4 * delta0


def cv_closed_form(model: QuantileDemandModel, change: PolicyChange, y0, trace_points=33):
    """Path-independent CV for a constrained log-linear demand model.

    Requires |r1| >= 1e-10; for a vanishing income coefficient the formula
    degenerates (use cv_path_ode, whose right-hand side has no such
    singularity).
    """
    if not (model.constrained or model.r2 == -model.r1):
        raise ValueError("closed form requires the symmetry restriction r2 = -r1")
    if abs(model.r1) < R1_DEGENERATE:
        raise DegenerateCoefficient(
            f"|r1|={abs(model.r1):.3e} below {R1_DEGENERATE}; use cv_path_ode instead"
        )
    r0 = _effective_r0(model, change.delta0)
    r1, r3 = model.r1, model.r3
    a1, a2, b1, b2 = change.a1, change.a2, change.b1, change.b2

    k_a = r0 / r1 + y0 + a2 * r3 / r1 + r3 / r1 ** 2 - a1

    def c_of(theta1_t, theta2_t):
        growth = math.exp(r1 * (theta2_t - a2))
        return growth * k_a + theta1_t - r0 / r1 - y0 - r3 * theta2_t / r1 - r3 / r1 ** 2

    ts = np.linspace(0.0, 1.0, trace_points)
    trace = []
    for t in ts:
        th1 = a1 + t * (b1 - a1)
        th2 = a2 + t * (b2 - a2)
        trace.append((float(t), th1, th2, 0.0 if t == 0.0 else c_of(th1, th2)))
    return CvResult(cv=c_of(b1, b2), method="closed-form", trace=tuple(trace), error_estimate=0.0)


def model_demand_fn(model: QuantileDemandModel, delta0=0.0):
    """Demand surface q(y, theta) of a fitted model, for the ODE solver."""

    def demand(y, theta):
        return model.demand(y, theta, delta0)

    return demand


def _loglinear_gradient(s, theta):
    return (1.0, math.log(s))


def _integrate_rk4(segment_rhs, segments, steps_per_segment, a):
    c = 0.0
    trace = [(0.0, a[0], a[1], 0.0)]
    for seg, m in zip(segments, steps_per_segment):
        t0, t1, p, vel = seg
        rhs = segment_rhs(seg)
        h = (t1 - t0) / m
        for i in range(m):
            t = t0 + i * h
            k1 = rhs(t, c)
            k2 = rhs(t + 0.5 * h, c + 0.5 * h * k1)
            k3 = rhs(t + 0.5 * h, c + 0.5 * h * k2)
            k4 = rhs(t + h, c + h * k3)
            c += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
            t_next = t0 + (i + 1) * h
            th = (p[0] + vel[0] * (t_next - t0), p[1] + vel[1] * (t_next - t0))
            trace.append((t_next, th[0], th[1], c))
    return c, trace


def cv_path_ode(demand_fn, change: PolicyChange, y0, path: ThetaPath | None = None,
                settings: CvSolverSettings | None = None, theta_gradient=None):
    """CV by RK4 integration of the compensation ODE along a theta path.

    demand_fn(y, theta) must return the attribute level q > 0; the default
    theta-gradient (1, ln q) is the log-linear frontier's.  The integral
    runs segment by segment so path kinks never sit inside an RK4 step.
    """
    path = ThetaPath.straight_line(change) if path is None else path
    settings = CvSolverSettings() if settings is None else settings
    grad = _loglinear_gradient if theta_gradient is None else theta_gradient
    segments = path.segments()

    def segment_rhs(seg):
        t0, _, p, vel = seg

        def rhs(t, c):
            if vel == (0.0, 0.0):
                return 0.0
            th = (p[0] + vel[0] * (t - t0), p[1] + vel[1] * (t - t0))
            try:
                q = float(demand_fn(y0 + c, th))
            except (DomainError, ValueError, TypeError, OverflowError) as exc:
                raise StepFailure(f"demand evaluation failed at t={t:.6g}: {exc}") from exc
            if not (math.isfinite(q) and q > 0.0):
                raise StepFailure(f"demand returned non-positive or non-finite level {q!r} at t={t:.6g}")
            g = grad(q, th)
            return vel[0] * g[0] + vel[1] * g[1]

        return rhs

    def allocation(n_total):
        lengths = [t1 - t0 for t0, t1, _, _ in segments]
        return [max(1, round(n_total * length)) for length in lengths]

    base = allocation(settings.steps)
    c_coarse, _ = _integrate_rk4(segment_rhs, segments, base, change.a)
    fine = [2 * m for m in base]
    c_fine, trace = _integrate_rk4(segment_rhs, segments, fine, change.a)
    estimate = abs(c_coarse - c_fine) / 15.0

    if estimate > settings.tolerance:
        # one doubling retry before giving up
        c_coarse = c_fine
        finer = [2 * m for m in fine]
        c_fine, trace = _integrate_rk4(segment_rhs, segments, finer, change.a)
        estimate = abs(c_coarse - c_fine) / 15.0
        if estimate > settings.tolerance:
            raise ToleranceNotMet(
                f"error estimate {estimate:.3e} above tolerance {settings.tolerance:.3e} after doubling"
            )

    return CvResult(cv=c_fine, method="path-ode", trace=tuple(trace), error_estimate=estimate)


def path_independence_gap(demand_fn, change: PolicyChange, y0,
                          settings: CvSolverSettings | None = None, theta_gradient=None):
    """Max pairwise |CV difference| across the three canonical path families."""
    values = [
        cv_path_ode(demand_fn, change, y0, ThetaPath.of(variant, change), settings,
                    theta_gradient=theta_gradient).cv
        for variant in PATH_FAMILIES
    ]
    return max(abs(u - v) for u in values for v in values)


@dataclass(frozen=True)
class CvTable:
    """CV matrix over (tau rows, y0 columns)."""

    taus: tuple[float, ...]
    y0s: tuple[float, ...]
    values: np.ndarray  # shape (len(taus), len(y0s))
    method: str
    error_estimates: np.ndarray

    def rows(self):
        """Long-form (tau, y0, cv, method, error) rows for CSV emission."""
        out = []
        for i, tau in enumerate(self.taus):
            for j, y0 in enumerate(self.y0s):
                out.append((tau, y0, float(self.values[i, j]), self.method,
                            float(self.error_estimates[i, j])))
        return out


def cv_table(models, y0_list, change: PolicyChange, method="closed-form",
             path_variant="straight-line", settings: CvSolverSettings | None = None):
    """CV at every (model tau, y0) pair; models must be constrained."""
    if not y0_list:
        raise ValueError("y0 list must be nonempty")
    models = list(models)
    values = np.empty((len(models), len(y0_list)))
    errors = np.zeros_like(values)
    for i, model in enumerate(models):
        for j, y0 in enumerate(y0_list):
            if method == "closed-form":
                res = cv_closed_form(model, change, y0)
            elif method == "path-ode":
                res = cv_path_ode(
                    model_demand_fn(model, change.delta0), change, y0,
                    ThetaPath.of(path_variant, change), settings,
                )
            else:
                raise ValueError(f"unknown method {method!r}")
            values[i, j] = res.cv
            errors[i, j] = res.error_estimate
    return CvTable(
        taus=tuple(m.tau for m in models),
        y0s=tuple(float(y) for y in y0_list),
        values=values,
        method=method,
        error_estimates=errors,
    )


@dataclass(frozen=True)
class CalibrationReport:
    """Outcome of inverting the benchmark CV table for its income columns."""

    y_incomes: tuple[float, ...]
    cv_matrix: np.ndarray
    benchmark: np.ndarray
    residuals: np.ndarray
    max_abs_residual: float
    rows_increasing_in_income: bool
    columns_increasing_in_tau: bool
    all_positive: bool


def calibrate_to_benchmark(models_by_tau, change: PolicyChange, benchmark,
                           median_tau=0.5):
    """Recover the benchmark's unstated income columns and check every cell.

    CV is affine in income for the closed form, so each income column is
    recovered by inverting the median-tau row at its published value; the
    remaining cells are then evaluated at those incomes and compared.
    """
    taus = sorted(models_by_tau)
    if median_tau not in models_by_tau:
        raise ValueError(f"median tau {median_tau} missing from models")
    benchmark = np.asarray(benchmark, dtype=float)
    if benchmark.shape != (len(taus), benchmark.shape[1]):
        raise ValueError("benchmark shape does not match the model set")

    median = models_by_tau[median_tau]
    slope = math.exp(median.r1 * (change.b2 - change.a2)) - 1.0
    if abs(slope) < 1e-15:
        raise DegenerateCoefficient("median CV is income-flat; cannot invert for income columns")
    intercept = cv_closed_form(median, change, 0.0).cv
    med_row = taus.index(median_tau)
    y_incomes = tuple((float(target) - intercept) / slope for target in benchmark[med_row])

    cv_matrix = np.empty_like(benchmark)
    for i, tau in enumerate(taus):
        for j, y0 in enumerate(y_incomes):
            cv_matrix[i, j] = cv_closed_form(models_by_tau[tau], change, y0).cv
    residuals = cv_matrix - benchmark

    rows_ok = bool(np.all(np.diff(cv_matrix, axis=1) > 0.0))
    cols_ok = bool(np.all(np.diff(cv_matrix, axis=0) > 0.0))
    return CalibrationReport(
        y_incomes=y_incomes,
        cv_matrix=cv_matrix,
        benchmark=benchmark,
        residuals=residuals,
        max_abs_residual=float(np.max(np.abs(residuals))),
        rows_increasing_in_income=rows_ok,
        columns_increasing_in_tau=cols_ok,
        all_positive=bool(np.all(cv_matrix > 0.0)),
    )
