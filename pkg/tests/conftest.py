"""Shared data-generating designs used across the estimation and acceptance tests."""

import math

import numpy as np
import pytest

from hedonic_welfare.estimation import fit_market_hedonic
from hedonic_welfare.population import DirectDemandSpec, MarketParams, SimConfig

THETA1S = (5.0, -12.0, 3.0, 18.0, -7.0, 0.0, 11.0, -15.0, 8.0)
NARROW_THETA2S = (18.0, 18.5, 19.0, 19.5, 20.0, 20.5, 21.0, 21.5, 22.0)
WIDE_THETA2S = (14.0, 15.5, 17.0, 18.5, 20.0, 21.5, 23.0, 24.5, 26.0)
DELTAS = (4.0, 4.4, 4.8, 5.2, 5.6, 4.2, 4.6, 5.0, 5.4)

INCOME_LOG_MEAN = math.log(420.0)

DIRECT_TRUTH = {"c0": 8.5, "c1": 0.8, "r1": 0.006, "r3": -0.3, "r4": 0.02}


def make_markets(theta2s, with_delta=False):
    return tuple(
        MarketParams(f"m{i + 1}", t1, t2, DELTAS[i] if with_delta else 0.0)
        for i, (t1, t2) in enumerate(zip(THETA1S, theta2s))
    )


def structural_config(seed=20260809, n_per_market=2000, noise_sd=5.0):
    """Log-log consumers on nine narrow-spread markets."""
    return SimConfig(
        markets=make_markets(NARROW_THETA2S),
        n_per_market=n_per_market,
        seed=seed,
        mode="structural",
        income_log_mean=INCOME_LOG_MEAN,
        income_log_sd=0.28,
        eta_log_mean=0.0,
        eta_log_sd=0.5,
        rent_noise_sd=noise_sd,
    )


def direct_spec(r2=None):
    t = DIRECT_TRUTH
    return DirectDemandSpec.linear_intercept(
        c0=t["c0"], c1=t["c1"], r1=t["r1"], r3=t["r3"], r4=t["r4"], r2=r2,
    )


def direct_config(seed=7, n_per_market=556, with_attrs=True, **overrides):
    """Exact log-linear demand on nine wide-theta2 markets."""
    kwargs = dict(
        markets=make_markets(WIDE_THETA2S, with_delta=with_attrs),
        n_per_market=n_per_market,
        seed=seed,
        mode="direct",
        direct=direct_spec(),
        income_log_mean=INCOME_LOG_MEAN,
        income_log_sd=0.35,
        rent_noise_sd=2.0,
        n_attrs=3 if with_attrs else 0,
    )
    kwargs.update(overrides)
    return SimConfig(**kwargs)


def symmetry_config(seed=11, r2=None):
    """High income-coefficient design for the r1 + r2 restriction test."""
    spec = DirectDemandSpec.linear_intercept(c0=3.0, c1=0.2, r1=0.03, r3=-0.5, r2=r2)
    return SimConfig(
        markets=make_markets(NARROW_THETA2S),
        n_per_market=556,
        seed=seed,
        mode="direct",
        direct=spec,
        income_log_mean=INCOME_LOG_MEAN,
        income_log_sd=0.35,
        rent_noise_sd=2.0,
    )


def fit_all_markets(pop, pc_scores=None):
    """Per-market frontier fits plus row-aligned theta arrays."""
    ln_score = np.log(pop.score)
    market_col = np.array(pop.market_id)
    fits = {}
    for mkt in pop.markets:
        mask = market_col == mkt.market_id
        fits[mkt.market_id] = fit_market_hedonic(
            mkt.market_id,
            pop.rent[mask],
            ln_score[mask],
            None if pc_scores is None else pc_scores[mask],
        )
    theta1 = np.array([fits[m].theta1 for m in pop.market_id])
    theta2 = np.array([fits[m].theta2 for m in pop.market_id])
    delta = np.array([fits[m].delta for m in pop.market_id])
    return ln_score, fits, theta1, theta2, delta


@pytest.fixture(scope="session")
def structural_population():
    from hedonic_welfare.population import generate_population

    return generate_population(structural_config())


@pytest.fixture(scope="session")
def direct_population():
    from hedonic_welfare.population import generate_population

    return generate_population(direct_config())
