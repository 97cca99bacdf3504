"""Known-utility oracles: consumer optima, indirect utility, and exact CV.

These provide the independent ground truth against which the estimation and
welfare pipeline is validated.  The log-log specification

    U(s, c; eta) = eta * ln(s) + ln(c),   eta > 0,

paired with a log-linear frontier has closed forms throughout:

    c* = theta2 / eta
    ln s* = (y - theta1) / theta2 - 1 / eta
    V(y, theta, eta) = eta * [(y - theta1)/theta2 - 1/eta] + ln(theta2 / eta)

The multi-attribute variant adds beta * ln(x) with x priced at delta per
unit, giving x* = beta * theta2 / (eta * delta) and
ln s* = (y - theta1)/theta2 - (1 + beta)/eta.

Everything else falls back to derivative-free maximization (golden section
on ln s) plus a bisection refinement of the first-order condition
U_s = U_c * dP/ds.  The compensating variation oracle inverts indirect
utility by expanding-bracket bisection, valid because V is strictly
increasing in income.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BracketFailure, InfeasibleBudget, NoInteriorOptimum
from .hedonic import AdditiveTwoPartSchedule, GeneralSchedule, LogLinearSchedule

__all__ = [
    "LogLogUtility",
    "MultiAttributeUtility",
    "GeneralUtility",
    "Consumer",
    "ConsumerOptimum",
    "AssumptionReport",
    "solve_consumer",
    "indirect_utility",
    "oracle_cv",
    "check_assumptions",
]

FOC_REL_TOL = 1e-8
GOLDEN_WIDTH = 1e-10
CV_REL_TOL = 1e-10
CV_MAX = 1e6


@dataclass(frozen=True)
class LogLogUtility:
    """U(s, c; eta) = eta ln s + ln c.

    Satisfies nonsatiation (U_s, U_c > 0), the single-crossing condition
    (U_s_eta = 1/s > 0, U_c_eta = 0), and strict concavity along any
    increasing frontier.
    """

    def value(self, s, c, eta):
        return eta * math.log(s) + math.log(c)

    def u_s(self, s, c, eta):
        return eta / s

    def u_c(self, s, c, eta):
        return 1.0 / c

    def u_ss(self, s, c, eta):
        return -eta / s ** 2

    def u_cs(self, s, c, eta):
        return 0.0

    def u_cc(self, s, c, eta):
        return -1.0 / c ** 2

    def u_s_eta(self, s, c, eta):
        return 1.0 / s

    def u_c_eta(self, s, c, eta):
        return 0.0


@dataclass(frozen=True)
class MultiAttributeUtility:
    """U(s, x, c; eta) = eta ln s + beta ln x + ln c, beta > 0."""

    beta: float = 1.0

    def __post_init__(self):
        if not self.beta > 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    def value(self, s, x, c, eta):
        return eta * math.log(s) + self.beta * math.log(x) + math.log(c)


@dataclass(frozen=True)
class GeneralUtility:
    """Caller-supplied U(s, c; eta) with first and second partials."""

    value_fn: object
    u_s_fn: object
    u_c_fn: object
    u_ss_fn: object = None
    u_cs_fn: object = None
    u_cc_fn: object = None

    def value(self, s, c, eta):
        return float(self.value_fn(s, c, eta))

    def u_s(self, s, c, eta):
        return float(self.u_s_fn(s, c, eta))

    def u_c(self, s, c, eta):
        return float(self.u_c_fn(s, c, eta))

    def u_ss(self, s, c, eta):
        return float(self.u_ss_fn(s, c, eta))

    def u_cs(self, s, c, eta):
        return float(self.u_cs_fn(s, c, eta))

    def u_cc(self, s, c, eta):
        return float(self.u_cc_fn(s, c, eta))


@dataclass(frozen=True)
class Consumer:
    """One household: weekly income y and preference type eta."""

    y: float
    eta: float
    market_id: str = ""

    def __post_init__(self):
        if not self.y > 0.0:
            raise ValueError(f"income must be positive, got {self.y}")
        if not self.eta > 0.0:
            raise ValueError(f"eta must be positive, got {self.eta}")


@dataclass(frozen=True)
class ConsumerOptimum:
    s: float
    x: float | None
    c: float


def _is_loglog_loglinear(utility, schedule):
    return isinstance(utility, LogLogUtility) and isinstance(schedule, LogLinearSchedule)


def _is_multi_additive(utility, schedule):
    return isinstance(utility, MultiAttributeUtility) and isinstance(schedule, AdditiveTwoPartSchedule)


def solve_consumer(utility, schedule, y, eta):
    """Utility-maximizing bundle on the budget frontier c = y - P(s).

    Closed forms handle the log-log and multi-attribute cases; anything else
    is solved by golden-section search on ln s over the feasible interval,
    refined by one bisection pass on the first-order condition.
    """
    if _is_loglog_loglinear(utility, schedule):
        c = schedule.theta2 / eta
        ln_s = (y - schedule.theta1) / schedule.theta2 - 1.0 / eta
        return ConsumerOptimum(s=math.exp(ln_s), x=None, c=c)

    if _is_multi_additive(utility, schedule):
        if not schedule.delta > 0.0:
            raise ValueError("multi-attribute closed form needs a positive delta")
        beta = utility.beta
        c = schedule.theta2 / eta
        x = beta * schedule.theta2 / (eta * schedule.delta)
        ln_s = (y - schedule.theta1) / schedule.theta2 - (1.0 + beta) / eta
        return ConsumerOptimum(s=math.exp(ln_s), x=x, c=c)

    return _solve_consumer_numeric(utility, schedule, y, eta)


def _feasible_log_interval(schedule, y):
    """ln-s interval on which consumption y - P(s) stays positive."""
    lo, hi = schedule.s_domain
    z_lo = math.log(lo)
    if y - schedule.price(lo) <= 0.0:
        raise InfeasibleBudget(f"no positive-consumption point at income y={y}")
    # P is increasing in s, so bisect for the budget-exhaustion point.
    z_hi = min(math.log(hi), z_lo + 1.0) if math.isfinite(hi) else z_lo + 1.0
    step = 1.0
    while y - schedule.price(math.exp(z_hi)) > 0.0:
        if math.isfinite(hi) and z_hi >= math.log(hi):
            return z_lo, math.log(hi)
        z_hi += step
        step *= 2.0
        if z_hi > 700.0:
            return z_lo, 700.0
    a, b = z_hi - step / 2.0 if step > 1.0 else z_lo, z_hi
    a = max(a, z_lo)
    for _ in range(200):
        m = 0.5 * (a + b)
        if y - schedule.price(math.exp(m)) > 0.0:
            a = m
        else:
            b = m
        if b - a < 1e-12:
            break
    return z_lo, a


def _solve_consumer_numeric(utility, schedule, y, eta):
    z_lo, z_hi = _feasible_log_interval(schedule, y)
    # Keep a whisker away from budget exhaustion so ln(c) stays finite.
    z_hi -= 1e-9

    def objective(z):
        s = math.exp(z)
        c = y - schedule.price(s)
        if c <= 0.0:
            return -math.inf
        return utility.value(s, c, eta)

    def foc(z):
        s = math.exp(z)
        c = y - schedule.price(s)
        return utility.u_s(s, c, eta) - utility.u_c(s, c, eta) * schedule.price_slope(s)

    # Golden-section maximization to interval width GOLDEN_WIDTH.
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = z_lo, z_hi
    c1 = b - invphi * (b - a)
    c2 = a + invphi * (b - a)
    f1, f2 = objective(c1), objective(c2)
    while b - a > GOLDEN_WIDTH:
        if f1 >= f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - invphi * (b - a)
            f1 = objective(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + invphi * (b - a)
            f2 = objective(c2)
    z_star = 0.5 * (a + b)

    # One bisection pass on the FOC around the golden-section point.
    h = max(1e-6, 64.0 * GOLDEN_WIDTH)
    lo, hi = max(z_lo, z_star - h), min(z_hi, z_star + h)
    g_lo, g_hi = foc(lo), foc(hi)
    if g_lo * g_hi > 0.0:
        # widen once across the whole feasible interval before giving up
        lo, hi = z_lo, z_hi
        g_lo, g_hi = foc(lo), foc(hi)
    if g_lo * g_hi <= 0.0:
        for _ in range(200):
            m = 0.5 * (lo + hi)
            gm = foc(m)
            if g_lo * gm <= 0.0:
                hi, g_hi = m, gm
            else:
                lo, g_lo = m, gm
            if hi - lo < 1e-14:
                break
        z_star = 0.5 * (lo + hi)
    else:
        raise NoInteriorOptimum("first-order condition has no sign change on the feasible interval")

    s = math.exp(z_star)
    c = y - schedule.price(s)
    resid = utility.u_s(s, c, eta) - utility.u_c(s, c, eta) * schedule.price_slope(s)
    if abs(resid) > FOC_REL_TOL * (1.0 + abs(utility.u_s(s, c, eta))):
        raise NoInteriorOptimum(f"FOC residual {resid:.3e} above tolerance at s={s:.6g}")
    return ConsumerOptimum(s=s, x=None, c=c)


def indirect_utility(utility, schedule, y, eta):
    """Maximized utility V(y, theta, eta); strictly increasing in y."""
    if _is_loglog_loglinear(utility, schedule):
        return eta * ((y - schedule.theta1) / schedule.theta2 - 1.0 / eta) + math.log(schedule.theta2 / eta)
    opt = solve_consumer(utility, schedule, y, eta)
    if _is_multi_additive(utility, schedule):
        return utility.value(opt.s, opt.x, opt.c, eta)
    return utility.value(opt.s, opt.c, eta)


def oracle_cv(utility, schedule_a, schedule_b, y, eta, method="auto"):
    """Compensating variation C solving V(y + C, b, eta) = V(y, a, eta).

    method: "auto" uses a closed form when one exists, "bisect" always runs
    the expanding-bracket bisection (the independent numeric oracle).
    """
    if method not in ("auto", "bisect"):
        raise ValueError(f"unknown method {method!r}")

    if method == "auto":
        if _is_loglog_loglinear(utility, schedule_a) and _is_loglog_loglinear(utility, schedule_b):
            a1, a2 = schedule_a.theta1, schedule_a.theta2
            b1, b2 = schedule_b.theta1, schedule_b.theta2
            return b1 - y + b2 * ((y - a1) / a2 + math.log(a2 / b2) / eta)
        if _is_multi_additive(utility, schedule_a) and _is_multi_additive(utility, schedule_b):
            # delta must be the fixed nuisance price; it cancels from CV.
            a1, a2 = schedule_a.theta1, schedule_a.theta2
            b1, b2 = schedule_b.theta1, schedule_b.theta2
            k = 1.0 + utility.beta
            return b1 - y + b2 * ((y - a1) / a2 + k * math.log(a2 / b2) / eta)

    v_target = indirect_utility(utility, schedule_a, y, eta)
    tol = CV_REL_TOL * (1.0 + abs(v_target))

    def gap(c):
        try:
            return indirect_utility(utility, schedule_b, y + c, eta) - v_target
        except InfeasibleBudget:
            # Below any feasible income the target utility is unreachable.
            return -math.inf

    g0 = gap(0.0)
    if abs(g0) <= tol:
        return 0.0
    # gap is strictly increasing in c; expand toward the root.
    lo = hi = 0.0
    step = 1.0
    if g0 < 0.0:
        while True:
            hi += step
            step *= 2.0
            if hi > CV_MAX:
                raise BracketFailure(f"no bracket below C={CV_MAX}")
            if gap(hi) >= 0.0:
                break
        lo = hi - step / 2.0
    else:
        floor = -y + 1e-9
        while True:
            lo -= step
            step *= 2.0
            if lo < floor:
                lo = floor
            if gap(lo) <= 0.0:
                break
            if lo == floor:
                raise BracketFailure("no bracket above the income floor")
        hi = min(0.0, lo + step / 2.0)

    for _ in range(300):
        mid = 0.5 * (lo + hi)
        gm = gap(mid)
        if abs(gm) <= tol:
            return mid
        if gm < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class AssumptionReport:
    """Grid diagnostics for the maintained curvature/monotonicity conditions."""

    min_concavity_margin: float
    min_demand_eta_slope: float
    max_roy_residual: float
    concavity_ok: bool
    monotone_in_eta_ok: bool
    roy_ok: bool
    n_grid: int
    n_roy_points: int

    @property
    def all_ok(self):
        return self.concavity_ok and self.monotone_in_eta_ok and self.roy_ok


def _second_order_expression(utility, schedule, s, c, eta):
    """U_ss - 2 P' U_cs + P'^2 U_cc at a frontier point; negative under the
    maintained curvature condition (frontier less convex than indifference
    curves)."""
    p1 = schedule.price_slope(s)
    return (
        utility.u_ss(s, c, eta)
        - 2.0 * p1 * utility.u_cs(s, c, eta)
        + p1 ** 2 * utility.u_cc(s, c, eta)
    )


def check_assumptions(utility, schedule, y_grid, eta_grid, roy_points=100, roy_tol=1e-5, seed=0):
    """Verify the oracle's maintained assumptions on a (y, eta) grid.

    Checks, in order:
      (a) the curvature expression U_ss - 2 P' U_cs + P'^2 U_cc is strictly
          negative at every grid optimum (reported as min of its negation);
      (b) optimal demand is strictly increasing in eta at each income;
      (c) the nonlinear Roy identity -(dV/d theta_j)/(dV/dy) = dP/d theta_j
          holds at the optimum, via central finite differences of indirect
          utility with relative step 1e-4, at `roy_points` random grid points.
    """
    y_grid = np.asarray(y_grid, dtype=float)
    eta_grid = np.asarray(eta_grid, dtype=float)

    min_margin = math.inf
    min_slope = math.inf
    s_star = np.empty((y_grid.size, eta_grid.size))
    for i, y in enumerate(y_grid):
        for j, eta in enumerate(eta_grid):
            opt = solve_consumer(utility, schedule, float(y), float(eta))
            s_star[i, j] = opt.s
            margin = -_second_order_expression(utility, schedule, opt.s, opt.c, float(eta))
            min_margin = min(min_margin, margin)
        d_eta = np.diff(eta_grid)
        d_s = np.diff(s_star[i])
        if d_eta.size:
            min_slope = min(min_slope, float(np.min(d_s / d_eta)))

    rng = np.random.default_rng(seed)
    max_roy = 0.0
    theta = schedule.theta
    for _ in range(roy_points):
        y = float(rng.uniform(y_grid.min(), y_grid.max()))
        eta = float(rng.uniform(eta_grid.min(), eta_grid.max()))
        opt = solve_consumer(utility, schedule, y, eta)
        grad = schedule.theta_gradient(opt.s)
        h_y = 1e-4 * max(1.0, abs(y))
        dv_dy = (
            indirect_utility(utility, schedule, y + h_y, eta)
            - indirect_utility(utility, schedule, y - h_y, eta)
        ) / (2.0 * h_y)
        for idx in (0, 1):
            h = 1e-4 * max(1.0, abs(theta[idx]))
            up = list(theta)
            dn = list(theta)
            up[idx] += h
            dn[idx] -= h
            sched_up = schedule.with_theta(*up)
            sched_dn = schedule.with_theta(*dn)
            dv_dth = (
                indirect_utility(utility, sched_up, y, eta)
                - indirect_utility(utility, sched_dn, y, eta)
            ) / (2.0 * h)
            max_roy = max(max_roy, abs(-dv_dth / dv_dy - grad[idx]))

    return AssumptionReport(
        min_concavity_margin=min_margin,
        min_demand_eta_slope=min_slope,
        max_roy_residual=max_roy,
        concavity_ok=min_margin > 0.0,
        monotone_in_eta_ok=min_slope > 0.0,
        roy_ok=max_roy <= roy_tol,
        n_grid=int(y_grid.size * eta_grid.size),
        n_roy_points=roy_points,
    )
