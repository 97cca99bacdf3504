"""Estimation stages: covariate reduction, market frontiers, quantile demand.

Stage 1  pca_first_component   first principal component of the non-score
                               attributes (power iteration on the correlation
                               matrix), emitting one index per household.
Stage 2  fit_market_hedonic    per-market OLS of weekly rent on
                               [1, ln score, pc index] via QR decomposition.
Stage 3  fit_quantile_demand   pooled quantile regression of ln score on
                               [1, y - theta1_m, theta2_m, delta_m], or the
                               unconstrained variant with y and theta1 as
                               separate regressors.
         fit_ivqr_grid         instrumental variant: profile the income
                               coefficient over a grid, picking the value at
                               which the instrument's coefficient vanishes.
         test_symmetry_restriction   r1 + r2 = 0 diagnostic.

The quantile solver minimizes the check loss sum rho_tau(u),
rho_tau(u) = u * (tau - 1{u < 0}), by iteratively reweighted least squares
on a smoothed surrogate (|u| ~ u^2 / max(|u|, eps), eps annealed from 1 to
1e-6), then polishes slope coordinates by golden-section line search on the
exact loss and snaps the intercept to the exact tau-quantile of the partial
residuals.  The final snap guarantees the optimality sandwich

    frac(u < 0) - (p+1)/n <= tau <= frac(u <= 0) + (p+1)/n.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConvergenceFailure,
    DegenerateDesign,
    GridExhausted,
    RankDeficient,
    SingularInput,
)

__all__ = [
    "PcaModel",
    "HedonicFit",
    "QuantileFit",
    "pca_first_component",
    "fit_market_hedonic",
    "fit_quantile_demand",
    "fit_ivqr_grid",
    "first_stage_f",
    "test_symmetry_restriction",
    "check_loss",
    "check_quantile_monotonicity",
]

POWER_TOL = 1e-12
POWER_MAX_ITER = 10_000
IRLS_EPS_LADDER = (1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
IRLS_WARM_LADDER = (1e-3, 1e-4, 1e-5, 1e-6)
IRLS_MAX_ITER = 30
IRLS_COEF_TOL = 1e-11


def _irls_step_tol(eps):
    # The smoothed solution differs from the exact one by O(eps) anyway;
    # iterating coarse levels to machine tolerance buys nothing.
    return max(IRLS_COEF_TOL, 1e-4 * eps)


# -- principal component -------------------------------------------------------

@dataclass(frozen=True)
class PcaModel:
    """First principal component of standardized attribute columns."""

    means: np.ndarray
    sds: np.ndarray
    loadings: np.ndarray
    eigenvalue: float
    explained_share: float
    kept_columns: tuple[int, ...]
    n_iterations: int

    def score(self, matrix):
        z = (np.asarray(matrix, dtype=float)[:, list(self.kept_columns)] - self.means) / self.sds
        return z @ self.loadings


def pca_first_component(matrix):
    """Dominant eigenpair of the attribute correlation matrix.

    Returns (PcaModel, scores).  Columns are standardized to mean 0 and
    sample sd 1 (ddof=1); constant columns are dropped with a warning.  The
    loading sign is fixed so the largest-magnitude loading is positive.
    """
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2:
        raise SingularInput("attribute matrix must be 2-dimensional")
    n, k = x.shape
    if k < 1 or n <= k:
        raise SingularInput(f"need n > k >= 1, got n={n}, k={k}")

    sds = x.std(axis=0, ddof=1)
    keep = np.nonzero(sds > 0.0)[0]
    if keep.size == 0:
        raise SingularInput("all attribute columns are constant")
    if keep.size < k:
        dropped = sorted(set(range(k)) - set(keep.tolist()))
        warnings.warn(f"dropping constant attribute columns {dropped}", stacklevel=2)
    x = x[:, keep]
    means = x.mean(axis=0)
    sds = x.std(axis=0, ddof=1)
    z = (x - means) / sds
    corr = (z.T @ z) / (n - 1)

    m = keep.size
    # A deterministic random start has no exact overlap with any fixed
    # eigenvector (an all-ones start would sit exactly on the non-dominant
    # eigenvector of every negatively correlated pair).
    rng = np.random.default_rng(12345)
    v = rng.standard_normal(m)
    v /= np.linalg.norm(v)
    iterations = 0
    for restart in range(4):
        converged = False
        for _ in range(POWER_MAX_ITER):
            iterations += 1
            w = corr @ v
            norm = np.linalg.norm(w)
            if norm == 0.0:
                break  # landed in the null space; perturb and retry
            w /= norm
            if w @ v < 0.0:
                w = -w
            delta = np.linalg.norm(w - v)
            v = w
            if delta <= POWER_TOL:
                converged = True
                break
        if converged:
            break
        # keep accumulated progress, shake off any orthogonal lock-in
        v = v + 0.01 * rng.standard_normal(m)
        v /= np.linalg.norm(v)
    else:
        raise ConvergenceFailure(
            "power iteration stalled",
            diagnostics={"iterations": iterations, "last_vector": v.tolist()},
        )

    eigenvalue = float(v @ (corr @ v))
    pivot = int(np.argmax(np.abs(v)))
    if v[pivot] < 0.0:
        v = -v
    scores = z @ v
    model = PcaModel(
        means=means,
        sds=sds,
        loadings=v,
        eigenvalue=eigenvalue,
        explained_share=eigenvalue / m,
        kept_columns=tuple(int(i) for i in keep),
        n_iterations=iterations,
    )
    return model, scores


# -- hedonic OLS ----------------------------------------------------------------

@dataclass(frozen=True)
class HedonicFit:
    """One market's frontier regression: rent on [1, ln score, pc index]."""

    market_id: str
    theta1: float
    theta2: float
    delta: float
    se_theta1: float
    se_theta2: float
    se_delta: float
    r_squared: float
    n: int


def _qr_ols(design, y):
    """Least squares through a thin QR factorization; never forms X'X."""
    q, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    scale = diag.max() if diag.size else 0.0
    if scale == 0.0 or np.any(diag < 1e-12 * scale * math.sqrt(design.shape[0])):
        raise RankDeficient("design matrix is rank deficient")
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - design @ beta
    return beta, resid, r


def fit_market_hedonic(market_id, rent, ln_score, pc_score=None):
    """OLS frontier fit with conventional standard errors and R^2.

    pc_score=None fits the two-regressor form [1, ln score] and reports a
    zero delta with NaN standard error.
    """
    rent = np.asarray(rent, dtype=float)
    ln_score = np.asarray(ln_score, dtype=float)
    cols = [np.ones_like(rent), ln_score]
    if pc_score is not None:
        cols.append(np.asarray(pc_score, dtype=float))
    design = np.column_stack(cols)
    n, p = design.shape
    if n < p + 1:
        raise RankDeficient(f"market {market_id}: n={n} too small for {p} regressors")

    beta, resid, r = _qr_ols(design, rent)
    rss = float(resid @ resid)
    tss = float(((rent - rent.mean()) ** 2).sum())
    r_squared = 1.0 - rss / tss if tss > 0.0 else 0.0
    sigma2 = rss / (n - p)
    r_inv = np.linalg.solve(r, np.eye(p))
    cov = sigma2 * (r_inv @ r_inv.T)
    ses = np.sqrt(np.diag(cov))

    if pc_score is None:
        delta, se_delta = 0.0, math.nan
    else:
        delta, se_delta = float(beta[2]), float(ses[2])
    return HedonicFit(
        market_id=market_id,
        theta1=float(beta[0]),
        theta2=float(beta[1]),
        delta=delta,
        se_theta1=float(ses[0]),
        se_theta2=float(ses[1]),
        se_delta=se_delta,
        r_squared=max(0.0, min(1.0, r_squared)),
        n=n,
    )


def first_stage_f(endogenous, instrument, exog):
    """Single-instrument first-stage F from a linear mean regression.

    Regresses the endogenous column on [exog, instrument] by OLS and returns
    the squared t-statistic of the instrument.
    """
    design = np.column_stack([exog, np.asarray(instrument, dtype=float)])
    beta, resid, r = _qr_ols(design, np.asarray(endogenous, dtype=float))
    n, p = design.shape
    sigma2 = float(resid @ resid) / (n - p)
    r_inv = np.linalg.solve(r, np.eye(p))
    cov = sigma2 * (r_inv @ r_inv.T)
    t_stat = beta[-1] / math.sqrt(cov[-1, -1])
    return float(t_stat * t_stat)


# -- quantile regression ---------------------------------------------------------

def check_loss(residuals, tau):
    """Sum of rho_tau(u) = u * (tau - 1{u < 0})."""
    u = np.asarray(residuals, dtype=float)
    return float(np.sum(u * (tau - (u < 0.0))))


@dataclass(frozen=True)
class QuantileFit:
    """Converged quantile fit plus the optimality diagnostics."""

    tau: float
    coefficients: np.ndarray  # aligned with the design columns
    names: tuple[str, ...]
    objective: float
    iterations: int
    converged: bool
    frac_below: float          # fraction of strictly negative residuals
    frac_at_or_below: float    # fraction of non-positive residuals
    n: int
    first_stage_f: float | None = None  # reported for instrumented fits only

    def coefficient(self, name):
        return float(self.coefficients[self.names.index(name)])

    def sandwich_ok(self):
        """Optimality condition frac(<0) <= tau <= frac(<=0), with (p+1)/n slack."""
        slack = (len(self.names) + 1) / self.n
        return (self.frac_below - slack <= self.tau) and (self.tau <= self.frac_at_or_below + slack)


def _exact_intercept(z, tau):
    """Minimizer over c of sum rho_tau(z - c): the tau-th order statistic."""
    z_sorted = np.sort(z)
    n = z_sorted.size
    k = max(1, math.ceil(n * tau))
    return float(z_sorted[k - 1])


def _golden_minimize(fn, lo, hi, tol=1e-12, max_iter=200):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c1 = b - invphi * (b - a)
    c2 = a + invphi * (b - a)
    f1, f2 = fn(c1), fn(c2)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if f1 <= f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - invphi * (b - a)
            f1 = fn(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + invphi * (b - a)
            f2 = fn(c2)
    return 0.5 * (a + b)


def _wls_solve(design, target, w):
    """Weighted least squares via the (tiny) normal equations."""
    xw = design * w[:, None]
    gram = xw.T @ design
    rhs = xw.T @ target
    try:
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        sw = np.sqrt(w)
        beta, *_ = np.linalg.lstsq(design * sw[:, None], target * sw, rcond=None)
        return beta


def _quantile_solve(design, target, tau, beta0=None, check_rank=True, polish=True):
    """Check-loss minimization: annealed IRLS, golden polish, intercept snap.

    The design's first column must be the intercept.  A warm start skips the
    coarse smoothing levels; polish=False stops after IRLS (used when
    profiling a grid, where only the final fit needs exact optimality).
    Returns (beta, iterations).
    """
    n, p = design.shape
    if n <= p:
        raise DegenerateDesign(f"need n > p, got n={n}, p={p}")
    if check_rank and np.linalg.matrix_rank(design) < p:
        raise DegenerateDesign("quantile design matrix is collinear")

    if beta0 is None:
        beta, *_ = np.linalg.lstsq(design, target, rcond=None)
        ladder = IRLS_EPS_LADDER
    else:
        beta = np.asarray(beta0, dtype=float).copy()
        ladder = IRLS_WARM_LADDER
    iterations = 0
    for eps in ladder:
        tol = _irls_step_tol(eps)
        for _ in range(IRLS_MAX_ITER):
            iterations += 1
            u = target - design @ beta
            w = np.where(u >= 0.0, tau, 1.0 - tau) / np.maximum(np.abs(u), eps)
            beta_new = _wls_solve(design, target, w)
            step = np.max(np.abs(beta_new - beta)) / (1.0 + np.max(np.abs(beta)))
            beta = beta_new
            if step < tol:
                break
    if not polish:
        return beta, iterations

    # Exact-loss polish on residual updates: golden section per slope
    # coordinate, exact quantile snap for the intercept.
    resid = target - design @ beta
    for _ in range(2):
        for j in range(1, p):
            col = design[:, j]
            col_scale = max(1.0, float(np.max(np.abs(col))))
            radius = max(1e-9, 1e-3 * (1.0 + abs(beta[j]))) / col_scale
            base = resid + beta[j] * col

            def fn(bj, base=base, col=col):
                return check_loss(base - bj * col, tau)

            beta[j] = _golden_minimize(fn, beta[j] - radius, beta[j] + radius)
            resid = base - beta[j] * col
        partial = resid + beta[0]
        beta[0] = _exact_intercept(partial, tau)
        resid = partial - beta[0]
    return beta, iterations


def _fit_quantile(design, target, tau, names, beta0=None):
    beta, iterations = _quantile_solve(design, target, tau, beta0=beta0)
    resid = target - design @ beta
    frac_below = float(np.mean(resid < 0.0))
    frac_leq = float(np.mean(resid <= 0.0))
    fit = QuantileFit(
        tau=tau,
        coefficients=beta,
        names=tuple(names),
        objective=check_loss(resid, tau),
        iterations=iterations,
        converged=True,
        frac_below=frac_below,
        frac_at_or_below=frac_leq,
        n=target.size,
    )
    if not fit.sandwich_ok():
        raise ConvergenceFailure(
            f"quantile fit failed the optimality sandwich at tau={tau}",
            diagnostics={
                "frac_below": frac_below,
                "frac_at_or_below": frac_leq,
                "tau": tau,
                "slack": (len(names) + 1) / target.size,
            },
        )
    return fit


def fit_quantile_demand(ln_score, income, theta1, theta2, delta=None, tau=0.5, constrained=True):
    """Pooled quantile regression of log demand on market-level frontiers.

    Constrained form regresses on [1, income - theta1, theta2(, delta)],
    which hardwires the symmetry restriction r2 = -r1.  The unconstrained
    form uses [1, income, theta1, theta2(, delta)] and recovers a separate
    r2 for the symmetry test.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau={tau} outside (0, 1)")
    ln_score = np.asarray(ln_score, dtype=float)
    income = np.asarray(income, dtype=float)
    theta1 = np.asarray(theta1, dtype=float)
    theta2 = np.asarray(theta2, dtype=float)
    ones = np.ones_like(ln_score)
    if constrained:
        cols = [ones, income - theta1, theta2]
        names = ["r0", "r1", "r3"]
    else:
        cols = [ones, income, theta1, theta2]
        names = ["r0", "r1", "r2", "r3"]
    if delta is not None:
        cols.append(np.asarray(delta, dtype=float))
        names.append("r4")
    design = np.column_stack(cols)
    return _fit_quantile(design, ln_score, tau, names)


def fit_ivqr_grid(ln_score, income, theta1, theta2, savings, delta=None, tau=0.5,
                  grid=(-0.01, 0.01, 401)):
    """Instrumented quantile fit: grid-profile the income coefficient.

    For each candidate r1 the concentrated outcome ln s - r1*(y - theta1) is
    quantile-regressed on [1, theta2(, delta), savings - theta1]; the
    selected r1 minimizes |instrument coefficient|, refined by one
    golden-section pass over the bracketing cells.  A boundary minimizer
    raises GridExhausted.
    """
    lo, hi, steps = grid
    if steps < 3 or not hi > lo:
        raise ValueError(f"grid must be (lo, hi, steps>=3) with hi > lo, got {grid}")
    ln_score = np.asarray(ln_score, dtype=float)
    income = np.asarray(income, dtype=float)
    theta1 = np.asarray(theta1, dtype=float)
    theta2 = np.asarray(theta2, dtype=float)
    savings = np.asarray(savings, dtype=float)
    inst = savings - theta1
    ones = np.ones_like(ln_score)
    cols = [ones, theta2]
    names = ["r0", "r3"]
    if delta is not None:
        cols.append(np.asarray(delta, dtype=float))
        names.append("r4")
    cols.append(inst)
    names.append("instrument")
    design = np.column_stack(cols)
    endo = income - theta1
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise DegenerateDesign("IVQR design matrix is collinear")

    beta_warm = None

    def inst_coef(r1):
        nonlocal beta_warm
        beta, _ = _quantile_solve(design, ln_score - r1 * endo, tau,
                                  beta0=beta_warm, check_rank=False, polish=False)
        beta_warm = beta
        return abs(float(beta[-1]))

    candidates = np.linspace(lo, hi, int(steps))
    values = np.array([inst_coef(r1) for r1 in candidates])
    best = int(np.argmin(values))
    if best in (0, len(candidates) - 1):
        raise GridExhausted(
            f"instrument coefficient minimized at grid boundary r1={candidates[best]:.6g}; widen the grid"
        )
    span = candidates[best + 1] - candidates[best - 1]
    r1_star = _golden_minimize(
        inst_coef, candidates[best - 1], candidates[best + 1], tol=max(1e-12, 1e-6 * span)
    )

    fit = _fit_quantile(design, ln_score - r1_star * endo, tau, names, beta0=beta_warm)
    coefficients = np.concatenate([fit.coefficients, [r1_star]])
    return QuantileFit(
        tau=tau,
        coefficients=coefficients,
        names=fit.names + ("r1",),
        objective=fit.objective,
        iterations=fit.iterations,
        converged=fit.converged,
        frac_below=fit.frac_below,
        frac_at_or_below=fit.frac_at_or_below,
        n=fit.n,
        first_stage_f=first_stage_f(endo, inst, design[:, :-1]),
    )


def test_symmetry_restriction(fit: QuantileFit, tolerance=None):
    """Signed statistic r1 + r2 and a pass/fail verdict.

    A constrained fit has no separate r2, hence a statistic of exactly zero.
    Default tolerance is 0.02 * |r1| + 1e-6.
    """
    r1 = fit.coefficient("r1")
    r2 = fit.coefficient("r2") if "r2" in fit.names else -r1
    statistic = r1 + r2
    tol = 0.02 * abs(r1) + 1e-6 if tolerance is None else tolerance
    return statistic, abs(statistic) <= tol


def check_quantile_monotonicity(fits, at_point):
    """Report tau pairs whose fitted quantile planes cross at a reference point.

    at_point maps design-column names to values (e.g. the sample means).
    Violations are returned, never repaired: each fit stands on its own tau.
    """
    ordered = sorted(fits, key=lambda f: f.tau)
    levels = []
    for fit in ordered:
        value = 0.0
        for name, coef in zip(fit.names, fit.coefficients):
            value += coef * (1.0 if name == "r0" else at_point[name])
        levels.append(value)
    violations = []
    for (f1, l1), (f2, l2) in zip(zip(ordered, levels), zip(ordered[1:], levels[1:])):
        if l2 < l1:
            violations.append((f1.tau, f2.tau, l1 - l2))
    return violations
