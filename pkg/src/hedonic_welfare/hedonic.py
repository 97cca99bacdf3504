"""Hedonic price schedules, quantile demand models, and policy paths.

The frontier of a market is P(s; theta), increasing in the attribute s.
The workhorse log-linear form is

    P(s) = theta1 + theta2 * ln(s),   theta2 > 0,

optionally extended by an additively separable second attribute priced at
delta per unit.  Demand at a preference quantile tau is log-linear,

    ln q(y, theta) = r0 + r1*y + r2*theta1 + r3*theta2 + r4*delta0,

and a model is "constrained" when it is parameterized through r1*(y - theta1),
which enforces r2 = -r1, the restriction that makes the welfare line integral
path-independent.

Units: incomes and rents are GBP/week; s is the raw attribute level (school
score in the reference application); theta2 is GBP/week per log point of s.
All types are immutable and all operations are pure functions.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = [
    "LogLinearSchedule",
    "AdditiveTwoPartSchedule",
    "GeneralSchedule",
    "Market",
    "QuantileDemandModel",
    "PolicyChange",
    "ThetaPath",
    "price_eval",
    "price_theta_gradient",
    "price_cross_derivative",
    "demand_quantile_eval",
    "slutsky_residual",
    "check_price_increasing",
]

# Effectively unbounded default attribute domain; the lower bound must stay
# strictly positive so ln(s) is defined.
DEFAULT_S_DOMAIN = (1e-300, math.inf)


def _check_domain(s, s_domain):
    lo, hi = s_domain
    if not (s > 0.0 and lo <= s <= hi):
        raise DomainError(f"attribute level s={s!r} outside domain [{lo}, {hi}]")


@dataclass(frozen=True)
class LogLinearSchedule:
    """P(s) = theta1 + theta2 * ln(s) on a positive attribute domain."""

    theta1: float
    theta2: float
    s_domain: tuple[float, float] = DEFAULT_S_DOMAIN

    def __post_init__(self):
        lo, hi = self.s_domain
        if not (0.0 < lo < hi):
            raise DomainError(f"s-domain must be an interval with positive lower bound, got {self.s_domain}")
        if not self.theta2 > 0.0:
            # dP/ds = theta2/s: increasing in s requires a positive slope.
            raise DomainError(f"theta2 must be positive for an increasing frontier, got {self.theta2}")

    @property
    def theta(self):
        return (self.theta1, self.theta2)

    def price(self, s):
        _check_domain(s, self.s_domain)
        return self.theta1 + self.theta2 * math.log(s)

    def price_slope(self, s):
        _check_domain(s, self.s_domain)
        return self.theta2 / s

    def theta_gradient(self, s):
        _check_domain(s, self.s_domain)
        return np.array([1.0, math.log(s)])

    def cross_derivative(self, s, j):
        _check_domain(s, self.s_domain)
        if j == 1:
            return 0.0
        if j == 2:
            return 1.0 / s
        raise IndexError(f"theta index j={j} out of range for a 2-parameter schedule")

    def with_theta(self, theta1, theta2):
        return LogLinearSchedule(theta1, theta2, self.s_domain)


@dataclass(frozen=True)
class AdditiveTwoPartSchedule:
    """P(s, x) = theta1 + theta2 * ln(s) + delta * x.

    The second attribute x is priced linearly and held fixed in welfare
    calculations, so theta-gradients exclude the delta component.
    """

    theta1: float
    theta2: float
    delta: float
    s_domain: tuple[float, float] = DEFAULT_S_DOMAIN

    def __post_init__(self):
        lo, hi = self.s_domain
        if not (0.0 < lo < hi):
            raise DomainError(f"s-domain must be an interval with positive lower bound, got {self.s_domain}")
        if not self.theta2 > 0.0:
            raise DomainError(f"theta2 must be positive for an increasing frontier, got {self.theta2}")

    @property
    def theta(self):
        return (self.theta1, self.theta2)

    def price(self, s, x=0.0):
        _check_domain(s, self.s_domain)
        return self.theta1 + self.theta2 * math.log(s) + self.delta * x

    def price_slope(self, s):
        _check_domain(s, self.s_domain)
        return self.theta2 / s

    def theta_gradient(self, s):
        # delta is a fixed nuisance price, not part of the moving theta.
        _check_domain(s, self.s_domain)
        return np.array([1.0, math.log(s)])

    def cross_derivative(self, s, j):
        _check_domain(s, self.s_domain)
        if j == 1:
            return 0.0
        if j == 2:
            return 1.0 / s
        raise IndexError(f"theta index j={j} out of range for a 2-parameter schedule")

    def with_theta(self, theta1, theta2):
        return AdditiveTwoPartSchedule(theta1, theta2, self.delta, self.s_domain)


@dataclass(frozen=True)
class GeneralSchedule:
    """Caller-supplied frontier with explicit derivative evaluators.

    Evaluators receive (s, theta) with theta a length-d tuple; no numeric
    differentiation happens here, so residual computations stay exact when
    closed forms exist.
    """

    theta: tuple[float, ...]
    price_fn: object
    slope_fn: object
    theta_gradient_fn: object
    cross_derivative_fn: object
    s_domain: tuple[float, float] = DEFAULT_S_DOMAIN

    def __post_init__(self):
        lo, hi = self.s_domain
        if not (0.0 < lo < hi):
            raise DomainError(f"s-domain must be an interval with positive lower bound, got {self.s_domain}")

    def price(self, s):
        _check_domain(s, self.s_domain)
        return float(self.price_fn(s, self.theta))

    def price_slope(self, s):
        _check_domain(s, self.s_domain)
        return float(self.slope_fn(s, self.theta))

    def theta_gradient(self, s):
        _check_domain(s, self.s_domain)
        return np.asarray(self.theta_gradient_fn(s, self.theta), dtype=float)

    def cross_derivative(self, s, j):
        _check_domain(s, self.s_domain)
        if not 1 <= j <= len(self.theta):
            raise IndexError(f"theta index j={j} out of range for a {len(self.theta)}-parameter schedule")
        return float(self.cross_derivative_fn(s, self.theta, j))

    def with_theta(self, *theta):
        return dataclasses.replace(self, theta=tuple(float(t) for t in theta))


@dataclass(frozen=True)
class Market:
    """Estimated frontier of one market: rent on [1, ln s, pc score]."""

    market_id: str
    theta1: float
    theta2: float
    delta: float
    n_obs: int
    r_squared: float

    N_REGRESSORS = 3

    def __post_init__(self):
        if self.n_obs < self.N_REGRESSORS + 1:
            raise ValueError(f"market {self.market_id}: n_obs={self.n_obs} below regressors+1")
        if not 0.0 <= self.r_squared <= 1.0:
            raise ValueError(f"market {self.market_id}: r_squared={self.r_squared} outside [0, 1]")


@dataclass(frozen=True)
class QuantileDemandModel:
    """Coefficients of ln q(y, theta) = r0 + r1 y + r2 theta1 + r3 theta2 + r4 delta0."""

    tau: float
    r0: float
    r1: float
    r2: float
    r3: float
    r4: float = 0.0
    constrained: bool = False

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau={self.tau} outside (0, 1)")
        if self.constrained and self.r2 != -self.r1:
            raise ValueError(f"constrained model requires r2 == -r1, got r1={self.r1}, r2={self.r2}")

    @classmethod
    def from_constrained(cls, tau, r0, r1, r3, r4=0.0):
        """Build the r1*(y - theta1) parameterization, which pins r2 = -r1."""
        return cls(tau=tau, r0=r0, r1=r1, r2=-r1, r3=r3, r4=r4, constrained=True)

    def log_demand(self, y, theta, delta0=0.0):
        theta1, theta2 = theta
        return self.r0 + self.r1 * y + self.r2 * theta1 + self.r3 * theta2 + self.r4 * delta0

    def demand(self, y, theta, delta0=0.0):
        return math.exp(self.log_demand(y, theta, delta0))


@dataclass(frozen=True)
class PolicyChange:
    """Frontier movement from a = (a1, a2) to b = (b1, b2) at fixed delta0."""

    a1: float
    a2: float
    b1: float
    b2: float
    delta0: float = 0.0

    def __post_init__(self):
        if not (self.a2 > 0.0 and self.b2 > 0.0):
            raise ValueError(f"endpoint slopes must be positive, got a2={self.a2}, b2={self.b2}")

    @property
    def a(self):
        return (self.a1, self.a2)

    @property
    def b(self):
        return (self.b1, self.b2)

    def reversed(self):
        return PolicyChange(self.b1, self.b2, self.a1, self.a2, self.delta0)


@dataclass(frozen=True)
class ThetaPath:
    """Piecewise-linear curve theta(t), t in [0, 1], from a to b.

    Knots are interpolated linearly; between knots the velocity
    d theta / dt is constant, which the welfare integrator exploits by
    stepping each segment separately.
    """

    variant: str
    knots_t: tuple[float, ...]
    knots_theta: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.knots_t) != len(self.knots_theta) or len(self.knots_t) < 2:
            raise ValueError("path needs matching t/theta knots, at least two")
        if self.knots_t[0] != 0.0 or self.knots_t[-1] != 1.0:
            raise ValueError("path parameter must start at 0 and end at 1")
        if any(t1 >= t2 for t1, t2 in zip(self.knots_t, self.knots_t[1:])):
            raise ValueError("knot parameters must be strictly increasing")

    @classmethod
    def straight_line(cls, change: PolicyChange):
        return cls("straight-line", (0.0, 1.0), (change.a, change.b))

    @classmethod
    def axis_first_theta1(cls, change: PolicyChange):
        """Move theta1 on t in [0, 1/2], then theta2."""
        mid = (change.b1, change.a2)
        return cls("axis-first-theta1", (0.0, 0.5, 1.0), (change.a, mid, change.b))

    @classmethod
    def axis_first_theta2(cls, change: PolicyChange):
        """Move theta2 on t in [0, 1/2], then theta1."""
        mid = (change.a1, change.b2)
        return cls("axis-first-theta2", (0.0, 0.5, 1.0), (change.a, mid, change.b))

    @classmethod
    def waypoints(cls, change: PolicyChange, points):
        """Visit intermediate (theta1, theta2) knots, t allocated by arc length."""
        knots = [change.a, *map(tuple, points), change.b]
        lengths = [math.hypot(q[0] - p[0], q[1] - p[1]) for p, q in zip(knots, knots[1:])]
        total = sum(lengths)
        if total <= 0.0:
            # Degenerate (a == b and no detour): a single stationary segment.
            return cls("waypoints", (0.0, 1.0), (change.a, change.b))
        ts = [0.0]
        acc = 0.0
        for seg in lengths[:-1]:
            acc += seg
            ts.append(acc / total)
        ts.append(1.0)
        # Coincident consecutive knots would produce zero-length t-intervals.
        keep_t, keep_k = [ts[0]], [knots[0]]
        for t, k in zip(ts[1:], knots[1:]):
            if t > keep_t[-1]:
                keep_t.append(t)
                keep_k.append(k)
        return cls("waypoints", tuple(keep_t), tuple(map(tuple, keep_k)))

    @classmethod
    def of(cls, variant: str, change: PolicyChange, waypoints=()):
        builders = {
            "straight-line": cls.straight_line,
            "axis-first-theta1": cls.axis_first_theta1,
            "axis-first-theta2": cls.axis_first_theta2,
        }
        if variant in builders:
            return builders[variant](change)
        if variant == "waypoints":
            return cls.waypoints(change, waypoints)
        raise ValueError(f"unknown path variant {variant!r}")

    def segments(self):
        """Yield (t0, t1, theta0, dtheta_dt) for each linear piece."""
        out = []
        for (t0, t1), (p, q) in zip(
            zip(self.knots_t, self.knots_t[1:]),
            zip(self.knots_theta, self.knots_theta[1:]),
        ):
            dt = t1 - t0
            vel = ((q[0] - p[0]) / dt, (q[1] - p[1]) / dt)
            out.append((t0, t1, p, vel))
        return out

    def theta(self, t):
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"path parameter t={t} outside [0, 1]")
        for t0, t1, p, vel in self.segments():
            if t <= t1:
                u = t - t0
                return (p[0] + vel[0] * u, p[1] + vel[1] * u)
        raise AssertionError("unreachable")


# -- operations ---------------------------------------------------------------

def price_eval(schedule, s, x=None):
    """Frontier price at attribute level s (GBP/week)."""
    if isinstance(schedule, AdditiveTwoPartSchedule):
        return schedule.price(s, 0.0 if x is None else x)
    return schedule.price(s)


def price_theta_gradient(schedule, s):
    """Gradient of P in theta at fixed s; log-linear forms give (1, ln s)."""
    return schedule.theta_gradient(s)


def price_cross_derivative(schedule, s, j):
    """Mixed derivative d2 P / (d theta_j d s); j is 1-based."""
    return schedule.cross_derivative(s, j)


def demand_quantile_eval(model: QuantileDemandModel, y, theta, delta0=0.0):
    """Attribute demand q(y, theta) = exp(r0 + r1 y + r2 th1 + r3 th2 + r4 delta0)."""
    return model.demand(y, theta, delta0)


def slutsky_residual(schedule, model: QuantileDemandModel, y, theta, delta0, j, k):
    """Signed symmetry gap of the nonlinear-budget Slutsky condition.

    With A(j, k) = d2P/(d theta_j d q) * {dq/dy * dP/d theta_k + dq/d theta_k},
    symmetry requires A(j, k) = A(k, j); the residual returned is
    A(k, j) - A(j, k), oriented so that for a log-linear schedule

        slutsky_residual(j=1, k=2) == r1 + r2

    identically in (y, theta) -- zero exactly for constrained models.
    """
    if j == k:
        raise ValueError("indices j and k must differ")
    q = model.demand(y, theta, delta0)
    grad = schedule.theta_gradient(q)
    coeffs = {1: model.r2, 2: model.r3}

    def partial_q(idx):
        if idx not in coeffs:
            raise IndexError(f"theta index {idx} out of range")
        return coeffs[idx] * q

    def term(cross_idx, brace_idx):
        cross = schedule.cross_derivative(q, cross_idx)
        brace = model.r1 * q * grad[brace_idx - 1] + partial_q(brace_idx)
        return cross * brace

    return term(k, j) - term(j, k)


def check_price_increasing(schedule, s_grid):
    """Minimum of dP/ds over a grid; positive means the frontier is increasing."""
    return min(schedule.price_slope(float(s)) for s in s_grid)
