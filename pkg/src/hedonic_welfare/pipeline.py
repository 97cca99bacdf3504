"""Stage orchestration: config validation, artifact emission, manifests.

A run is configured by one JSON document (hashed into the manifest) and an
output directory.  Stages:

simulate   draw a synthetic population, write households.csv
estimate   PCA index -> per-market frontier OLS -> pooled quantile fits,
           write markets.csv and demand_fits.csv
welfare    the full chain estimate + CV table, write cv_table.csv
check      re-derive the invariant battery from the artifacts on disk
replicate  benchmark-constants calibration, CV table and figures
plot       figures from existing artifacts

Every stage fails fast and removes partial outputs; manifests record input
and output hashes plus per-stage row accounting (loaded = used + dropped).
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .constants import load_constants
from .dataio import (
    DemandFitRecord,
    format_number,
    load_households,
    read_cv_table_csv,
    read_demand_fits_csv,
    read_markets_csv,
    sha256_bytes,
    sha256_file,
    write_cv_table_csv,
    write_demand_fits_csv,
    write_households,
    write_manifest,
    write_markets_csv,
)
from .errors import ConfigError, MissingArtifact, ReplicationFailure
from .estimation import (
    HedonicFit,
    check_quantile_monotonicity,
    fit_ivqr_grid,
    fit_market_hedonic,
    fit_quantile_demand,
    pca_first_component,
)
from .hedonic import PolicyChange, QuantileDemandModel
from .plots import write_cv_plot, write_frontier_plot
from .population import DirectDemandSpec, MarketParams, SimConfig, generate_population
from .welfare import (
    CvSolverSettings,
    calibrate_to_benchmark,
    cv_path_ode,
    cv_closed_form,
    cv_table,
    model_demand_fn,
    path_independence_gap,
)

__all__ = [
    "load_config",
    "run_simulate",
    "run_estimate",
    "run_welfare",
    "run_check",
    "run_replicate",
    "run_plot",
]

SCHEMA_VERSION = 1
REPLICATION_TOLERANCE = 0.1  # GBP


# -- configuration ---------------------------------------------------------------

def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def _parse_sim_config(block, seed):
    markets = tuple(
        MarketParams(
            market_id=str(m["market_id"]),
            theta1=float(m["theta1"]),
            theta2=float(m["theta2"]),
            delta=float(m.get("delta", 0.0)),
        )
        for m in block.get("markets", [])
    )
    direct = None
    if "direct" in block:
        d = block["direct"]
        if "knots" in d:
            direct = DirectDemandSpec(tuple(tuple(float(v) for v in knot) for knot in d["knots"]))
        else:
            direct = DirectDemandSpec.linear_intercept(
                c0=float(d["c0"]),
                c1=float(d["c1"]),
                r1=float(d["r1"]),
                r3=float(d["r3"]),
                r4=float(d.get("r4", 0.0)),
                r2=None if d.get("r2") is None else float(d["r2"]),
            )
    kwargs = {}
    for key in (
        "mode", "income_log_mean", "income_log_sd", "eta_log_mean", "eta_log_sd",
        "tau_fixed", "rent_noise_sd", "income_noise_sd", "endogeneity_rho",
        "savings_scale", "savings_log_sd", "n_attrs", "attr_noise_sd",
    ):
        if key in block:
            kwargs[key] = block[key]
    if "attr_loadings" in block:
        kwargs["attr_loadings"] = tuple(float(v) for v in block["attr_loadings"])
    return SimConfig(
        markets=markets,
        n_per_market=int(block["n_per_market"]),
        seed=int(seed),
        direct=direct,
        **kwargs,
    )


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    path: str
    seed: int
    households_path: str
    out_dir: str | None
    simulate: SimConfig | None
    taus: tuple[float, ...]
    use_ivqr: bool
    ivqr_grid: tuple[float, float, int]
    welfare: dict
    check: dict


def load_config(path) -> RunConfig:
    """Parse and validate the run configuration; cheap checks happen here,
    before any stage does work."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None

    _require(raw.get("schema_version") == SCHEMA_VERSION,
             f"schema_version must be {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    seed = int(raw.get("seed", 0))

    est = raw.get("estimate", {})
    taus = tuple(float(t) for t in est.get("taus", (0.25, 0.5, 0.75)))
    _require(all(0.0 < t < 1.0 for t in taus), f"taus must lie strictly inside (0, 1), got {taus}")
    _require(all(t1 < t2 for t1, t2 in zip(taus, taus[1:])), f"taus must be strictly increasing, got {taus}")
    grid = est.get("ivqr_grid", (-0.01, 0.01, 401))
    _require(len(grid) == 3, "ivqr_grid must be (lo, hi, steps)")

    wf = raw.get("welfare", {})
    if "policy" in wf and "mode" not in wf["policy"]:
        pol = wf["policy"]
        _require(all(k in pol for k in ("a1", "a2", "b1", "b2")), "explicit policy needs a1, a2, b1, b2")

    sim = None
    if "simulate" in raw:
        sim = _parse_sim_config(raw["simulate"], seed)

    io_block = raw.get("io", {})
    return RunConfig(
        raw=raw,
        path=str(path),
        seed=seed,
        households_path=io_block.get("households", "households.csv"),
        out_dir=io_block.get("out_dir"),
        simulate=sim,
        taus=taus,
        use_ivqr=bool(est.get("use_ivqr", False)),
        ivqr_grid=(float(grid[0]), float(grid[1]), int(grid[2])),
        welfare=wf,
        check=raw.get("check", {}),
    )


def _resolve_households_path(config: RunConfig, out_dir):
    path = config.households_path
    if not os.path.isabs(path):
        candidate = os.path.join(out_dir, path)
        if os.path.exists(candidate):
            return candidate
        base = os.path.join(os.path.dirname(config.path), path)
        if os.path.exists(base):
            return base
        return candidate
    return path


class _StageOutputs:
    """Tracks written artifacts so a failing stage leaves nothing behind."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.hashes = {}
        self._paths = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def record(self, name, data: bytes):
        self.hashes[name] = sha256_bytes(data)
        self._paths.append(self.path(name))

    def rollback(self):
        for p in self._paths:
            try:
                os.unlink(p)
            except FileNotFoundError:
                pass


def _manifest(config: RunConfig, stages, warnings, outputs: _StageOutputs, started, inputs=None):
    return {
        "tool_version": __version__,
        "config_sha256": sha256_file(config.path) if os.path.exists(config.path) else None,
        "input_sha256": inputs or {},
        "output_sha256": outputs.hashes,
        "stages": stages,
        "warnings": warnings,
        "wall_clock_seconds": round(time.perf_counter() - started, 6),
    }


# -- stages -----------------------------------------------------------------------

def run_simulate(config: RunConfig, out_dir):
    """Draw the configured population and emit households.csv."""
    _require(config.simulate is not None, "config has no simulate block")
    started = time.perf_counter()
    outputs = _StageOutputs(out_dir)
    try:
        pop = generate_population(config.simulate)
        data = write_households(outputs.path("households.csv"), pop)
        outputs.record("households.csv", data)
        stages = {
            "simulate": {
                "loaded": pop.n_generated,
                "used": pop.n,
                "dropped": pop.n_dropped,
            }
        }
        manifest = _manifest(config, stages, [], outputs, started)
        outputs.record("manifest.json", write_manifest(outputs.path("manifest.json"), manifest))
    except Exception:
        outputs.rollback()
        raise
    return manifest


def _estimate_core(config: RunConfig, out_dir, outputs: _StageOutputs):
    """Steps 1-3 on households.csv; returns fits and bookkeeping."""
    households_path = _resolve_households_path(config, out_dir)
    if not os.path.exists(households_path):
        raise ConfigError(f"households file not found: {households_path}")
    table = load_households(households_path)
    stages = {"load": {"loaded": table.n_loaded, "used": table.n, "dropped": table.n_dropped}}
    inputs = {"households.csv": sha256_file(households_path)}
    warnings_list = []

    # Step 1: collapse attributes to the first principal component.
    pc_scores = None
    if table.n_attrs > 0:
        pca, pc_scores = pca_first_component(table.attrs)
        stages["pca"] = {
            "columns": table.n_attrs,
            "explained_share": pca.explained_share,
            "iterations": pca.n_iterations,
        }

    # Step 2: per-market frontier regressions.
    ln_score = np.log(table.score)
    market_ids = table.market_ids()
    row_market = np.array(table.market_id)
    fits = []
    for mid in market_ids:
        mask = row_market == mid
        fits.append(
            fit_market_hedonic(
                mid,
                table.rent[mask],
                ln_score[mask],
                None if pc_scores is None else pc_scores[mask],
            )
        )
    stages["hedonic"] = {"markets": len(fits)}

    # Step 3: pooled quantile fits on market-level frontier regressors.
    fit_by_market = {f.market_id: f for f in fits}
    theta1 = np.array([fit_by_market[m].theta1 for m in table.market_id])
    theta2 = np.array([fit_by_market[m].theta2 for m in table.market_id])
    delta = np.array([fit_by_market[m].delta for m in table.market_id]) if pc_scores is not None else None

    qfits = []
    for tau in config.taus:
        if config.use_ivqr:
            _require(table.savings is not None, "IVQR needs a savings_gbp column")
            fit = fit_ivqr_grid(
                ln_score, table.income, theta1, theta2, table.savings,
                delta=delta, tau=tau, grid=config.ivqr_grid,
            )
        else:
            fit = fit_quantile_demand(
                ln_score, table.income, theta1, theta2, delta=delta, tau=tau, constrained=True,
            )
        qfits.append(fit)

    at_point = {
        "r1": float(np.mean(table.income - theta1)),
        "r3": float(np.mean(theta2)),
    }
    if delta is not None:
        at_point["r4"] = float(np.mean(delta))
    for t1, t2, gap in check_quantile_monotonicity(qfits, at_point):
        warnings_list.append(
            f"quantile crossing between tau={format_number(t1)} and tau={format_number(t2)} "
            f"(gap {format_number(gap)})"
        )

    records = [
        DemandFitRecord(
            tau=f.tau,
            r0=f.coefficient("r0"),
            r1=f.coefficient("r1"),
            r3=f.coefficient("r3"),
            r4=f.coefficient("r4") if "r4" in f.names else 0.0,
            objective=f.objective,
            converged=f.converged,
            frac_below=f.frac_below,
        )
        for f in qfits
    ]
    stages["quantile"] = {"fits": len(records), "ivqr": config.use_ivqr}

    outputs.record("markets.csv", write_markets_csv(outputs.path("markets.csv"), fits))
    outputs.record("demand_fits.csv", write_demand_fits_csv(outputs.path("demand_fits.csv"), records))
    return table, fits, records, stages, inputs, warnings_list


def run_estimate(config: RunConfig, out_dir):
    started = time.perf_counter()
    outputs = _StageOutputs(out_dir)
    try:
        _, _, _, stages, inputs, warns = _estimate_core(config, out_dir, outputs)
        manifest = _manifest(config, stages, warns, outputs, started, inputs)
        outputs.record("manifest.json", write_manifest(outputs.path("manifest.json"), manifest))
    except Exception:
        outputs.rollback()
        raise
    return manifest


def _resolve_policy(config: RunConfig, fits):
    wf = config.welfare
    _require("policy" in wf, "welfare config needs a policy block")
    pol = wf["policy"]
    delta0 = float(pol.get("delta0", 0.0))
    if pol.get("mode") == "market-percentiles":
        lo, hi = float(pol.get("lo", 25.0)), float(pol.get("hi", 75.0))
        ordered = sorted(fits, key=lambda f: f.theta2)
        m = len(ordered)
        _require(m >= 2, "market-percentile policy needs at least two markets")

        def nearest_rank(p):
            k = max(1, math.ceil(p / 100.0 * m))
            return ordered[min(k, m) - 1]

        a = nearest_rank(lo)
        b = nearest_rank(hi)
        return PolicyChange(a1=a.theta1, a2=a.theta2, b1=b.theta1, b2=b.theta2, delta0=delta0)
    return PolicyChange(
        a1=float(pol["a1"]), a2=float(pol["a2"]),
        b1=float(pol["b1"]), b2=float(pol["b2"]), delta0=delta0,
    )


def _resolve_y0(config: RunConfig, table):
    wf = config.welfare
    spec = wf.get("y0", {"income_percentiles": [25, 50, 75]})
    if isinstance(spec, dict):
        pcts = [float(p) for p in spec.get("income_percentiles", [25, 50, 75])]
        _require(table is not None, "income-percentile y0 needs household data")
        return [float(np.quantile(table.income, p / 100.0)) for p in pcts]
    return [float(v) for v in spec]


def _integrator_settings(config: RunConfig):
    block = config.welfare.get("integrator", {})
    return CvSolverSettings(
        steps=int(block.get("steps", 256)),
        tolerance=float(block.get("tolerance", 1e-6)),
    )


def run_welfare(config: RunConfig, out_dir):
    """Full chain: estimation stages then the CV table (the tau loop)."""
    started = time.perf_counter()
    outputs = _StageOutputs(out_dir)
    try:
        table, fits, records, stages, inputs, warns = _estimate_core(config, out_dir, outputs)
        policy = _resolve_policy(config, fits)
        y0_list = _resolve_y0(config, table)
        models = [
            QuantileDemandModel.from_constrained(r.tau, r.r0, r.r1, r.r3, r.r4)
            for r in records
        ]
        method = config.welfare.get("method", "closed-form")
        tbl = cv_table(
            models, y0_list, policy, method=method,
            path_variant=config.welfare.get("path", "straight-line"),
            settings=_integrator_settings(config),
        )
        outputs.record("cv_table.csv", write_cv_table_csv(outputs.path("cv_table.csv"), tbl.rows()))
        stages["welfare"] = {
            "cells": int(tbl.values.size),
            "method": method,
            "policy": {"a1": policy.a1, "a2": policy.a2, "b1": policy.b1, "b2": policy.b2,
                       "delta0": policy.delta0},
            "y0": y0_list,
        }
        manifest = _manifest(config, stages, warns, outputs, started, inputs)
        outputs.record("manifest.json", write_manifest(outputs.path("manifest.json"), manifest))
    except Exception:
        outputs.rollback()
        raise
    return manifest


# -- invariant battery ---------------------------------------------------------

def run_check(config: RunConfig, out_dir):
    """Re-derive the invariant suite from artifacts on disk.

    Returns the report dict; "passed" aggregates every check.
    """
    households_path = _resolve_households_path(config, out_dir)
    for needed in ("markets.csv", "demand_fits.csv"):
        if not os.path.exists(os.path.join(out_dir, needed)):
            raise MissingArtifact(f"{needed} not found in {out_dir}; run estimate/welfare first")
    if not os.path.exists(households_path):
        raise ConfigError(f"households file not found: {households_path}")

    tol = {
        "orthogonality": 1e-8,
        "score_mean": 1e-10,
        "score_variance_rel": 1e-8,
        "ode_floor": 1e-8,
        "path_gap": 1e-8,
    }
    tol.update(config.check)

    table = load_households(households_path)
    markets = read_markets_csv(os.path.join(out_dir, "markets.csv"))
    dfits = read_demand_fits_csv(os.path.join(out_dir, "demand_fits.csv"))
    checks = []

    def add(name, passed, value, tolerance):
        checks.append({
            "name": name,
            "passed": bool(passed),
            "value": float(value) if value is not None else None,
            "tolerance": float(tolerance) if tolerance is not None else None,
        })

    # frontier slopes positive
    min_theta2 = min(m.theta2 for m in markets)
    add("frontier_increasing", min_theta2 > 0.0, min_theta2, 0.0)

    # OLS residual orthogonality, recomputed per market
    ln_score = np.log(table.score)
    pc_scores = None
    if table.n_attrs > 0:
        pca, pc_scores = pca_first_component(table.attrs)
        add("pca_score_mean", abs(float(np.mean(pc_scores))) <= tol["score_mean"],
            abs(float(np.mean(pc_scores))), tol["score_mean"])
        var = float(np.var(pc_scores, ddof=1))
        rel = abs(var - pca.eigenvalue) / pca.eigenvalue
        add("pca_score_variance", rel <= tol["score_variance_rel"], rel, tol["score_variance_rel"])

    row_market = np.array(table.market_id)
    worst_orth = 0.0
    by_id = {m.market_id: m for m in markets}
    for mid in table.market_ids():
        mask = row_market == mid
        m = by_id[mid]
        cols = [np.ones(int(mask.sum())), ln_score[mask]]
        beta = [m.theta1, m.theta2]
        if pc_scores is not None:
            cols.append(pc_scores[mask])
            beta.append(m.delta)
        design = np.column_stack(cols)
        resid = table.rent[mask] - design @ np.array(beta)
        n = resid.size
        for col in cols:
            scale = max(1.0, float(np.max(np.abs(col)))) * max(1.0, float(np.std(resid)))
            worst_orth = max(worst_orth, abs(float(resid @ col)) / (n * scale))
    add("ols_orthogonality", worst_orth <= tol["orthogonality"], worst_orth, tol["orthogonality"])

    # quantile sandwich, recomputed from stored coefficients
    theta1 = np.array([by_id[m].theta1 for m in table.market_id])
    theta2 = np.array([by_id[m].theta2 for m in table.market_id])
    delta = np.array([by_id[m].delta for m in table.market_id])
    p_count = 3 + (1 if pc_scores is not None else 0)
    worst_slack = -math.inf
    for r in dfits:
        fitted = r.r0 + r.r1 * (table.income - theta1) + r.r3 * theta2 + r.r4 * delta
        resid = ln_score - fitted
        frac_below = float(np.mean(resid < 0.0))
        frac_leq = float(np.mean(resid <= 0.0))
        slack = (p_count + 1) / resid.size
        violation = max(frac_below - slack - r.tau, r.tau - frac_leq - slack)
        worst_slack = max(worst_slack, violation)
    add("quantile_sandwich", worst_slack <= 0.0, worst_slack, 0.0)

    # closed form vs ODE and path independence on the fitted models
    if "policy" in config.welfare:
        fits_for_policy = [
            HedonicFit(m.market_id, m.theta1, m.theta2, m.delta, m.se_theta1,
                       m.se_theta2, m.se_delta, m.r_squared, m.n)
            for m in markets
        ]
        policy = _resolve_policy(config, fits_for_policy)
        y0_list = _resolve_y0(config, table)
        settings = _integrator_settings(config)
        worst_pair = 0.0
        worst_gap = 0.0
        for r in dfits:
            model = QuantileDemandModel.from_constrained(r.tau, r.r0, r.r1, r.r3, r.r4)
            demand = model_demand_fn(model, policy.delta0)
            for y0 in y0_list:
                closed = cv_closed_form(model, policy, y0)
                ode = cv_path_ode(demand, policy, y0, settings=settings)
                bound = max(tol["ode_floor"], 10.0 * ode.error_estimate)
                worst_pair = max(worst_pair, abs(closed.cv - ode.cv) - bound)
            worst_gap = max(worst_gap, path_independence_gap(demand, policy, y0_list[0], settings))
        add("closed_form_vs_ode", worst_pair <= 0.0, worst_pair, 0.0)
        add("path_independence_gap", worst_gap <= tol["path_gap"], worst_gap, tol["path_gap"])

    report = {
        "passed": all(c["passed"] for c in checks),
        "checks": checks,
        "tool_version": __version__,
    }
    outputs = _StageOutputs(out_dir)
    data = write_manifest(outputs.path("check_report.json"), report)
    outputs.record("check_report.json", data)
    return report


# -- replication ------------------------------------------------------------------

def run_replicate(out_dir, constants_path=None):
    """Calibrate the benchmark CV table from the shipped constants and verify
    every cell, the monotone patterns, and the universal welfare loss."""
    started = time.perf_counter()
    consts = load_constants(path=constants_path)
    report = calibrate_to_benchmark(consts.demand_models, consts.policy, consts.cv_quartiles)

    patterns = {
        "rows_increasing_in_income": report.rows_increasing_in_income,
        "columns_increasing_in_tau": report.columns_increasing_in_tau,
        "all_cells_positive": report.all_positive,
        "decile_rows_increasing": bool(np.all(np.diff(consts.cv_deciles, axis=1) > 0.0)),
        "decile_columns_increasing": bool(np.all(np.diff(consts.cv_deciles, axis=0) > 0.0)),
    }
    ok = report.max_abs_residual <= REPLICATION_TOLERANCE and all(patterns.values())

    outputs = _StageOutputs(out_dir)
    try:
        models = [consts.demand_models[t] for t in consts.quartile_taus]
        tbl = cv_table(models, list(report.y_incomes), consts.policy, method="closed-form")
        outputs.record("cv_table.csv", write_cv_table_csv(outputs.path("cv_table.csv"), tbl.rows()))
        ln_cross = write_frontier_plot(
            outputs.path("frontier_change.svg"), outputs.path("frontier_change.csv"), consts.policy
        )
        outputs.record("frontier_change.svg", open(outputs.path("frontier_change.svg"), "rb").read())
        outputs.record("frontier_change.csv", open(outputs.path("frontier_change.csv"), "rb").read())
        write_cv_plot(outputs.path("cv_by_quantile.svg"), outputs.path("cv_by_quantile.csv"), tbl.rows())
        outputs.record("cv_by_quantile.svg", open(outputs.path("cv_by_quantile.svg"), "rb").read())
        outputs.record("cv_by_quantile.csv", open(outputs.path("cv_by_quantile.csv"), "rb").read())

        payload = {
            "passed": ok,
            "max_abs_residual_gbp": report.max_abs_residual,
            "residual_tolerance_gbp": REPLICATION_TOLERANCE,
            "calibrated_incomes_gbp_week": list(report.y_incomes),
            "cv_matrix": report.cv_matrix.tolist(),
            "benchmark": report.benchmark.tolist(),
            "residuals": report.residuals.tolist(),
            "patterns": patterns,
            "frontier_crossing_ln_score": ln_cross,
            "wall_clock_seconds": round(time.perf_counter() - started, 6),
            "tool_version": __version__,
        }
        outputs.record("replicate_report.json",
                       write_manifest(outputs.path("replicate_report.json"), payload))
    except Exception:
        outputs.rollback()
        raise
    if not ok:
        raise ReplicationFailure(
            f"replication failed: max residual {report.max_abs_residual:.4f} GBP, patterns {patterns}"
        )
    return payload


def run_plot(config: RunConfig, out_dir):
    """Figures from artifacts already on disk."""
    cv_path = os.path.join(out_dir, "cv_table.csv")
    if not os.path.exists(cv_path):
        raise MissingArtifact(f"cv_table.csv not found in {out_dir}; run welfare first")
    cv_rows = read_cv_table_csv(cv_path)

    markets_path = os.path.join(out_dir, "markets.csv")
    if "policy" in config.welfare:
        fits = None
        if os.path.exists(markets_path):
            fits = [
                HedonicFit(m.market_id, m.theta1, m.theta2, m.delta, m.se_theta1,
                           m.se_theta2, m.se_delta, m.r_squared, m.n)
                for m in read_markets_csv(markets_path)
            ]
        policy = _resolve_policy(config, fits)
    else:
        raise ConfigError("plot needs a welfare.policy block to draw the frontier change")

    s_lo, s_hi = 50.0, 650.0
    households_path = _resolve_households_path(config, out_dir)
    if os.path.exists(households_path):
        table = load_households(households_path)
        s_lo, s_hi = float(table.score.min()), float(table.score.max())
        if s_lo >= s_hi:
            s_lo, s_hi = 0.9 * s_lo, 1.1 * s_hi

    outputs = _StageOutputs(out_dir)
    try:
        ln_cross = write_frontier_plot(
            outputs.path("frontier_change.svg"), outputs.path("frontier_change.csv"),
            policy, s_lo=s_lo, s_hi=s_hi,
        )
        write_cv_plot(outputs.path("cv_by_quantile.svg"), outputs.path("cv_by_quantile.csv"), cv_rows)
    except Exception:
        outputs.rollback()
        raise
    return {"frontier_crossing_ln_score": ln_cross, "series": len(cv_rows)}
