"""Loader for the shipped benchmark constants (paper_constants.json).

The file carries the published regional frontier estimates, the quantile
demand coefficients at the quartiles, the benchmark policy endpoints, and
the CV tables those coefficients imply.  Its SHA-256 is pinned here so a
corrupted or edited copy is rejected before any replication runs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ChecksumError
from .hedonic import PolicyChange, QuantileDemandModel

__all__ = ["BenchmarkConstants", "load_constants", "CONSTANTS_FILENAME", "CONSTANTS_SHA256"]

CONSTANTS_FILENAME = "paper_constants.json"
CONSTANTS_SHA256 = "a16d10f32456328fb91cde2b68da7a37f0399b7680dcf8a6d8955f1f84ac4d3c"


@dataclass(frozen=True)
class BenchmarkConstants:
    regions: tuple[dict, ...]
    demand_models: dict  # tau -> constrained QuantileDemandModel
    policy: PolicyChange
    first_stage_f: float
    quartile_taus: tuple[float, ...]
    cv_quartiles: np.ndarray
    decile_taus: tuple[float, ...]
    cv_deciles: np.ndarray

    def region(self, market_id):
        for reg in self.regions:
            if reg["market_id"] == market_id:
                return reg
        raise KeyError(market_id)


def _read_bytes(path=None):
    if path is not None:
        with open(path, "rb") as fh:
            return fh.read()
    return resources.files(__package__).joinpath(CONSTANTS_FILENAME).read_bytes()


def load_constants(path=None, verify=True) -> BenchmarkConstants:
    """Load and integrity-check the constants; `path` overrides the shipped copy."""
    raw = _read_bytes(path)
    if verify:
        digest = hashlib.sha256(raw).hexdigest()
        if digest != CONSTANTS_SHA256:
            raise ChecksumError(
                f"{CONSTANTS_FILENAME} checksum mismatch: expected {CONSTANTS_SHA256[:12]}..., "
                f"got {digest[:12]}..."
            )
    data = json.loads(raw.decode("utf-8"))

    models = {
        float(fit["tau"]): QuantileDemandModel.from_constrained(
            tau=float(fit["tau"]),
            r0=float(fit["r0"]),
            r1=float(fit["r1"]),
            r3=float(fit["r3"]),
            r4=float(fit["r4"]),
        )
        for fit in data["quantile_fits"]
    }
    pol = data["policy"]
    policy = PolicyChange(
        a1=float(pol["a1"]), a2=float(pol["a2"]),
        b1=float(pol["b1"]), b2=float(pol["b2"]),
        delta0=float(pol["delta0"]),
    )
    quart = data["cv_benchmark_quartiles"]
    dec = data["cv_benchmark_deciles"]
    return BenchmarkConstants(
        regions=tuple(data["regions"]),
        demand_models=models,
        policy=policy,
        first_stage_f=float(data["first_stage_f"]),
        quartile_taus=tuple(float(t) for t in quart["taus"]),
        cv_quartiles=np.asarray(quart["values"], dtype=float),
        decile_taus=tuple(float(t) for t in dec["taus"]),
        cv_deciles=np.asarray(dec["values"], dtype=float),
    )
