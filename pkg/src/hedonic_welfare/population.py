"""Synthetic household populations on hedonic budget frontiers.

Two generating modes:

structural
    Heterogeneous log-log consumers maximize utility on each market's
    log-linear frontier; score demand comes from the closed form
    ln s = (y - theta1)/theta2 - 1/eta with eta log-normal.

direct
    Log demand is drawn exactly from the log-linear quantile specification:
    ln s = r0(tau) + r1 y + r2 theta1 + r3 theta2 + r4 delta with
    tau ~ Uniform(0, 1) and coefficient paths linear between tau knots.
    An optional endogeneity channel correlates the observed-income
    measurement noise with tau, which breaks plain quantile regression but
    not the savings instrument.

Rents carry additive Gaussian measurement noise on the price level.  Rows
whose noiseless residual income y - P(s) is non-positive are dropped and
counted, mirroring survey-style exclusions; nothing is dropped silently.

Determinism: each market draws from its own substream derived from
(seed, market_id), so a market's rows do not depend on which other markets
are present or on their order.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = [
    "MarketParams",
    "DirectDemandSpec",
    "SimConfig",
    "Population",
    "generate_population",
]


@dataclass(frozen=True)
class MarketParams:
    """True frontier parameters of one simulated market."""

    market_id: str
    theta1: float
    theta2: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.theta2 > 0.0:
            raise ConfigError(f"market {self.market_id}: theta2 must be positive")


@dataclass(frozen=True)
class DirectDemandSpec:
    """Quantile-demand coefficients, piecewise linear in tau.

    Each knot is (tau, r0, r1, r2, r3, r4); between knots every coefficient
    interpolates linearly, with constant extrapolation outside the knot
    range.  r0 must be strictly increasing across knots so the implied
    quantile function is monotone.
    """

    knots: tuple[tuple[float, float, float, float, float, float], ...]

    def __post_init__(self):
        if len(self.knots) < 2:
            raise ConfigError("direct-demand spec needs at least two tau knots")
        taus = [k[0] for k in self.knots]
        if any(not 0.0 <= t <= 1.0 for t in taus) or any(t1 >= t2 for t1, t2 in zip(taus, taus[1:])):
            raise ConfigError("knot taus must be strictly increasing within [0, 1]")
        r0s = [k[1] for k in self.knots]
        if any(a >= b for a, b in zip(r0s, r0s[1:])):
            raise ConfigError("r0 must be strictly increasing in tau (monotone quantile function)")

    @classmethod
    def linear_intercept(cls, c0, c1, r1, r3, r4=0.0, r2=None):
        """r0(tau) = c0 + c1*tau with constant slopes; r2 defaults to -r1."""
        if not c1 > 0.0:
            raise ConfigError(f"intercept slope c1 must be positive, got {c1}")
        r2v = -r1 if r2 is None else r2
        return cls(((0.0, c0, r1, r2v, r3, r4), (1.0, c0 + c1, r1, r2v, r3, r4)))

    def coefficients(self, tau):
        """Interpolated (r0, r1, r2, r3, r4) arrays at tau (scalar or array)."""
        tau = np.asarray(tau, dtype=float)
        knot_tau = np.array([k[0] for k in self.knots])
        cols = [np.interp(tau, knot_tau, np.array([k[i] for k in self.knots])) for i in range(1, 6)]
        return tuple(cols)

    def log_demand(self, tau, y, theta1, theta2, delta):
        r0, r1, r2, r3, r4 = self.coefficients(tau)
        return r0 + r1 * np.asarray(y) + r2 * theta1 + r3 * theta2 + r4 * delta


@dataclass(frozen=True)
class SimConfig:
    """Generator settings; every scale parameter is non-negative."""

    markets: tuple[MarketParams, ...]
    n_per_market: int
    seed: int
    mode: str = "structural"  # "structural" | "direct"
    income_log_mean: float = math.log(400.0)
    income_log_sd: float = 0.30
    eta_log_mean: float = 0.0
    eta_log_sd: float = 0.5
    direct: DirectDemandSpec | None = None
    tau_fixed: float | None = None
    rent_noise_sd: float = 5.0
    income_noise_sd: float = 0.0
    endogeneity_rho: float = 0.0
    savings_scale: float = 0.6
    savings_log_sd: float = 0.4
    n_attrs: int = 0
    attr_loadings: tuple[float, ...] = (1.0, 0.8, 0.6, 0.4)
    attr_noise_sd: float = 0.5

    def __post_init__(self):
        if self.mode not in ("structural", "direct"):
            raise ConfigError(f"unknown simulation mode {self.mode!r}")
        if self.mode == "direct" and self.direct is None:
            raise ConfigError("direct mode needs a DirectDemandSpec")
        if not self.markets:
            raise ConfigError("at least one market is required")
        if self.n_per_market < 1:
            raise ConfigError("n_per_market must be at least 1")
        for name in ("income_log_sd", "eta_log_sd", "rent_noise_sd", "income_noise_sd",
                     "savings_log_sd", "attr_noise_sd"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be non-negative")
        if not -1.0 < self.endogeneity_rho < 1.0:
            raise ConfigError("endogeneity_rho must lie in (-1, 1)")
        if self.tau_fixed is not None and not 0.0 < self.tau_fixed < 1.0:
            raise ConfigError("tau_fixed must lie in (0, 1)")
        if self.n_attrs > len(self.attr_loadings):
            raise ConfigError(f"n_attrs={self.n_attrs} exceeds available loadings")


@dataclass
class Population:
    """Generated rows, columnar; truth columns stay in memory only."""

    household_id: list[str]
    market_id: list[str]
    income: np.ndarray
    rent: np.ndarray
    score: np.ndarray
    savings: np.ndarray
    attrs: np.ndarray  # (n, k); k may be 0
    eta: np.ndarray | None
    tau: np.ndarray | None
    income_true: np.ndarray
    n_generated: int
    n_dropped: int
    markets: tuple[MarketParams, ...] = field(default_factory=tuple)

    @property
    def n(self):
        return len(self.household_id)


def _market_rng(seed, market_id):
    digest = hashlib.sha256(market_id.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "big")
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), key)))


def _generate_market(config: SimConfig, mkt: MarketParams):
    rng = _market_rng(config.seed, mkt.market_id)
    n = config.n_per_market

    y_true = np.exp(rng.normal(config.income_log_mean, config.income_log_sd, size=n))
    eta = tau = None
    income_noise = np.zeros(n)

    if config.mode == "structural":
        eta = np.exp(rng.normal(config.eta_log_mean, config.eta_log_sd, size=n))
        ln_s = (y_true - mkt.theta1) / mkt.theta2 - 1.0 / eta
    else:
        g1 = rng.standard_normal(n)
        g2 = rng.standard_normal(n)
        rho = config.endogeneity_rho
        g2 = rho * g1 + math.sqrt(1.0 - rho * rho) * g2
        if config.tau_fixed is not None:
            tau = np.full(n, config.tau_fixed)
        else:
            # Phi(g1); erf keeps the draw in the open interval.
            tau = 0.5 * (1.0 + np.vectorize(math.erf)(g1 / math.sqrt(2.0)))
        income_noise = config.income_noise_sd * g2
        ln_s = config.direct.log_demand(tau, y_true, mkt.theta1, mkt.theta2, mkt.delta)
    ln_s = np.asarray(ln_s, dtype=float)
    score = np.exp(ln_s)

    k = config.n_attrs
    if k > 0:
        latent = rng.standard_normal(n)
        loadings = np.array(config.attr_loadings[:k])
        attrs = latent[:, None] * loadings[None, :] + config.attr_noise_sd * rng.standard_normal((n, k))
        price_index = latent
    else:
        attrs = np.empty((n, 0))
        price_index = np.zeros(n)

    rent_clean = mkt.theta1 + mkt.theta2 * ln_s + mkt.delta * price_index
    rent = rent_clean + config.rent_noise_sd * rng.standard_normal(n)
    savings = config.savings_scale * y_true * np.exp(
        rng.normal(0.0, config.savings_log_sd, size=n)
    )
    income_obs = y_true + income_noise

    keep = (y_true - rent_clean) > 0.0
    dropped = int(n - keep.sum())
    ids = [f"{mkt.market_id}-{i:05d}" for i in np.nonzero(keep)[0]]

    return {
        "ids": ids,
        "income": income_obs[keep],
        "rent": rent[keep],
        "score": score[keep],
        "savings": savings[keep],
        "attrs": attrs[keep],
        "eta": eta[keep] if eta is not None else None,
        "tau": tau[keep] if tau is not None else None,
        "income_true": y_true[keep],
        "dropped": dropped,
    }


def generate_population(config: SimConfig) -> Population:
    """Draw all markets; deterministic given (seed, market ids)."""
    parts = [(mkt, _generate_market(config, mkt)) for mkt in config.markets]
    household_id = []
    market_id = []
    for mkt, part in parts:
        household_id.extend(part["ids"])
        market_id.extend([mkt.market_id] * len(part["ids"]))

    def cat(key):
        return np.concatenate([p[key] for _, p in parts]) if parts else np.empty(0)

    has_eta = parts[0][1]["eta"] is not None
    has_tau = parts[0][1]["tau"] is not None
    return Population(
        household_id=household_id,
        market_id=market_id,
        income=cat("income"),
        rent=cat("rent"),
        score=cat("score"),
        savings=cat("savings"),
        attrs=np.vstack([p["attrs"] for _, p in parts]),
        eta=cat("eta") if has_eta else None,
        tau=cat("tau") if has_tau else None,
        income_true=cat("income_true"),
        n_generated=config.n_per_market * len(config.markets),
        n_dropped=sum(p["dropped"] for _, p in parts),
        markets=config.markets,
    )
