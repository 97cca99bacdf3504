"""CSV schemas, validated loading, and deterministic writers.

File formats (all UTF-8, LF line endings, '.' decimal separator, numerics
at 15 significant digits so a write-read round trip is lossless):

households.csv   household_id, market_id, income_weekly_gbp,
                 rent_weekly_gbp, school_score[, savings_gbp]
                 [, attr_1 .. attr_k]
markets.csv      market_id, theta1, theta2, delta, se_theta1, se_theta2,
                 se_delta, r_squared, n
demand_fits.csv  tau, r0, r1, r3, r4, objective, converged, frac_below
cv_table.csv     tau, y0, cv_gbp, method, error_estimate
manifest.json    tool version, config/input/output hashes, wall clock,
                 per-stage row accounting, warnings

Loading households enforces positivity (income, rent, score > 0; savings
>= 0) and the residual-income rule income - rent > 0; offending rows are
dropped and counted with their line numbers, never silently.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, SchemaError

__all__ = [
    "HouseholdTable",
    "MarketRecord",
    "DemandFitRecord",
    "format_number",
    "load_households",
    "write_households",
    "write_markets_csv",
    "read_markets_csv",
    "write_demand_fits_csv",
    "read_demand_fits_csv",
    "write_cv_table_csv",
    "read_cv_table_csv",
    "sha256_bytes",
    "sha256_file",
    "write_manifest",
    "read_manifest",
]

HOUSEHOLD_REQUIRED = ("household_id", "market_id", "income_weekly_gbp", "rent_weekly_gbp", "school_score")
MARKETS_HEADER = ("market_id", "theta1", "theta2", "delta", "se_theta1", "se_theta2", "se_delta", "r_squared", "n")
DEMAND_FITS_HEADER = ("tau", "r0", "r1", "r3", "r4", "objective", "converged", "frac_below")
CV_TABLE_HEADER = ("tau", "y0", "cv_gbp", "method", "error_estimate")
_ATTR_RE = re.compile(r"attr_(\d+)$")


def format_number(x) -> str:
    """15-significant-digit decimal text; bit-stable across runs."""
    return f"{float(x):.15g}"


def _format_bool(b) -> str:
    return "true" if b else "false"


def _parse_bool(text):
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"expected true/false, got {text!r}")


@dataclass
class HouseholdTable:
    """Validated household rows, columnar."""

    household_id: list[str]
    market_id: list[str]
    income: np.ndarray
    rent: np.ndarray
    score: np.ndarray
    savings: np.ndarray | None
    attrs: np.ndarray  # (n, k), k >= 0
    n_loaded: int = 0
    n_dropped: int = 0
    dropped_lines: list[int] = field(default_factory=list)

    @property
    def n(self):
        return len(self.household_id)

    @property
    def n_attrs(self):
        return self.attrs.shape[1]

    def market_ids(self):
        seen = []
        for m in self.market_id:
            if m not in seen:
                seen.append(m)
        return seen


def _validate_household_header(header):
    cols = list(header)
    if len(set(cols)) != len(cols):
        raise SchemaError(f"duplicate columns in header: {cols}")
    missing = [c for c in HOUSEHOLD_REQUIRED if c not in cols]
    if missing:
        raise SchemaError(f"missing required columns: {missing}")
    attr_ids = []
    for c in cols:
        if c in HOUSEHOLD_REQUIRED or c == "savings_gbp":
            continue
        m = _ATTR_RE.match(c)
        if not m:
            raise SchemaError(f"unexpected column {c!r} (only savings_gbp and attr_1..attr_k are optional)")
        attr_ids.append(int(m.group(1)))
    if sorted(attr_ids) != list(range(1, len(attr_ids) + 1)):
        raise SchemaError(f"attribute columns must be attr_1..attr_k contiguous, got {sorted(attr_ids)}")
    has_savings = "savings_gbp" in cols
    return cols, has_savings, len(attr_ids)


def load_households(path) -> HouseholdTable:
    """Read and validate households.csv; positivity violations are dropped
    with line numbers, malformed cells raise ParseError."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        cols, has_savings, k = _validate_household_header(header)
        idx = {c: i for i, c in enumerate(cols)}
        attr_idx = [idx[f"attr_{j}"] for j in range(1, k + 1)]

        ids, mkts, incomes, rents, scores, savings, attrs = [], [], [], [], [], [], []
        n_loaded = 0
        dropped_lines = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            n_loaded += 1
            if len(row) != len(cols):
                raise ParseError(f"{path}:{line_no}: expected {len(cols)} fields, got {len(row)}", line=line_no)
            try:
                income = float(row[idx["income_weekly_gbp"]])
                rent = float(row[idx["rent_weekly_gbp"]])
                score = float(row[idx["school_score"]])
                sav = float(row[idx["savings_gbp"]]) if has_savings else None
                attr_row = [float(row[i]) for i in attr_idx]
            except ValueError as exc:
                raise ParseError(f"{path}:{line_no}: {exc}", line=line_no) from None
            ok = income > 0.0 and rent > 0.0 and score > 0.0 and income - rent > 0.0
            if has_savings and (sav is None or sav < 0.0 or not np.isfinite(sav)):
                ok = False
            if not all(np.isfinite(v) for v in (income, rent, score)):
                ok = False
            if not ok:
                dropped_lines.append(line_no)
                continue
            ids.append(row[idx["household_id"]])
            mkts.append(row[idx["market_id"]])
            incomes.append(income)
            rents.append(rent)
            scores.append(score)
            if has_savings:
                savings.append(sav)
            attrs.append(attr_row)

    return HouseholdTable(
        household_id=ids,
        market_id=mkts,
        income=np.array(incomes, dtype=float),
        rent=np.array(rents, dtype=float),
        score=np.array(scores, dtype=float),
        savings=np.array(savings, dtype=float) if has_savings else None,
        attrs=np.array(attrs, dtype=float).reshape(len(ids), k),
        n_loaded=n_loaded,
        n_dropped=len(dropped_lines),
        dropped_lines=dropped_lines,
    )


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    data = buf.getvalue().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def write_households(path, table) -> bytes:
    """Emit the households schema from a HouseholdTable or Population."""
    savings = getattr(table, "savings", None)
    attrs = getattr(table, "attrs", None)
    k = 0 if attrs is None else attrs.shape[1]
    header = list(HOUSEHOLD_REQUIRED)
    if savings is not None:
        header.append("savings_gbp")
    header.extend(f"attr_{j}" for j in range(1, k + 1))
    rows = []
    for i in range(len(table.household_id)):
        row = [
            table.household_id[i],
            table.market_id[i],
            format_number(table.income[i]),
            format_number(table.rent[i]),
            format_number(table.score[i]),
        ]
        if savings is not None:
            row.append(format_number(savings[i]))
        row.extend(format_number(attrs[i, j]) for j in range(k))
        rows.append(row)
    return _write_csv(path, header, rows)


@dataclass(frozen=True)
class MarketRecord:
    market_id: str
    theta1: float
    theta2: float
    delta: float
    se_theta1: float
    se_theta2: float
    se_delta: float
    r_squared: float
    n: int


def write_markets_csv(path, fits) -> bytes:
    rows = [
        [
            f.market_id,
            format_number(f.theta1),
            format_number(f.theta2),
            format_number(f.delta),
            format_number(f.se_theta1),
            format_number(f.se_theta2),
            format_number(f.se_delta),
            format_number(f.r_squared),
            str(int(f.n)),
        ]
        for f in fits
    ]
    return _write_csv(path, MARKETS_HEADER, rows)


def _read_table(path, expected_header):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != tuple(expected_header):
            raise SchemaError(f"{path}: header {header} does not match {tuple(expected_header)}")
        return [row for row in reader if row]


def read_markets_csv(path):
    records = []
    for row in _read_table(path, MARKETS_HEADER):
        records.append(MarketRecord(
            market_id=row[0],
            theta1=float(row[1]),
            theta2=float(row[2]),
            delta=float(row[3]),
            se_theta1=float(row[4]),
            se_theta2=float(row[5]),
            se_delta=float(row[6]),
            r_squared=float(row[7]),
            n=int(row[8]),
        ))
    return records


@dataclass(frozen=True)
class DemandFitRecord:
    tau: float
    r0: float
    r1: float
    r3: float
    r4: float
    objective: float
    converged: bool
    frac_below: float


def write_demand_fits_csv(path, records) -> bytes:
    rows = [
        [
            format_number(r.tau),
            format_number(r.r0),
            format_number(r.r1),
            format_number(r.r3),
            format_number(r.r4),
            format_number(r.objective),
            _format_bool(r.converged),
            format_number(r.frac_below),
        ]
        for r in records
    ]
    return _write_csv(path, DEMAND_FITS_HEADER, rows)


def read_demand_fits_csv(path):
    records = []
    for row in _read_table(path, DEMAND_FITS_HEADER):
        records.append(DemandFitRecord(
            tau=float(row[0]),
            r0=float(row[1]),
            r1=float(row[2]),
            r3=float(row[3]),
            r4=float(row[4]),
            objective=float(row[5]),
            converged=_parse_bool(row[6]),
            frac_below=float(row[7]),
        ))
    return records


def write_cv_table_csv(path, rows) -> bytes:
    """rows: iterable of (tau, y0, cv, method, error_estimate)."""
    out = [
        [
            format_number(tau),
            format_number(y0),
            format_number(cv),
            method,
            format_number(err),
        ]
        for tau, y0, cv, method, err in rows
    ]
    return _write_csv(path, CV_TABLE_HEADER, out)


def read_cv_table_csv(path):
    return [
        (float(r[0]), float(r[1]), float(r[2]), r[3], float(r[4]))
        for r in _read_table(path, CV_TABLE_HEADER)
    ]


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_manifest(path, manifest: dict) -> bytes:
    data = (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def read_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
