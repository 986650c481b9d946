"""CSV preprocessing: parse, standardize dates, impute prices, cap outliers, aggregate.

Stages run in a fixed order (standardize -> filter missing -> impute -> cap ->
aggregate).  Quantities stay integral end to end so monthly totals conserve
the capped record quantities exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass, field, replace
from datetime import date, datetime
from pathlib import Path

import numpy as np

from .errors import DateParseError, SchemaError

# Canonical field -> default header (matched case-insensitively after trimming).
DEFAULT_COLUMNS = {
    "date": "Date",
    "product_id": "Product ID",
    "quantity": "Quantity Ordered",
    "backordered_quantity": "Quantity Backordered",
    "fulfilled_quantity": "Fulfilled Quantity",
    "unit_price": "Unit Price",
    "stockout_flag": "Stockout Flag",
    "supplier_id": "Supplier ID",
    "readiness": "Supplier Readiness Score",
    "lead_time_days": "Lead Time (Days)",
    "delay_flag": "Fulfillment Delay Flag",
    "category": "Category",
    "units": "Units",
}
REQUIRED = ("date", "product_id", "quantity")
DATE_FORMATS = {
    "iso": "%Y-%m-%d",
    "us": "%m/%d/%Y",
    "eu": "%d-%m-%Y",
    "month": "%Y-%m",
}
DEFAULT_DATE_PRIORITY = ("iso", "us", "eu", "month")
SERIES_COLUMNS = ("period", "quantity", "records", "capped", "imputed")
SERIES_MAPPING = {"date": "period", "quantity": "quantity", "product_id": None}


@dataclass
class RawRecord:
    line: int
    date_text: str
    product_id: str | None
    quantity: int
    date: date | None = None
    unit_price: float | None = None
    category: str | None = None
    lead_time_days: int | None = None
    fulfilled_quantity: int | None = None
    backordered_quantity: int | None = None
    supplier_id: str | None = None
    readiness: float | None = None
    stockout_flag: int | None = None
    delay_flag: int | None = None
    price_imputed: bool = False
    price_missing: bool = False
    capped: bool = False


@dataclass
class Reject:
    line: int
    reason: str


@dataclass
class ParseResult:
    records: list[RawRecord]
    rejects: list[Reject]
    warnings: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class MonthlyDemandSeries:
    periods: tuple[str, ...]  # "YYYY-MM", contiguous and increasing
    counts: np.ndarray
    records: np.ndarray
    capped: np.ndarray
    imputed: np.ndarray

    def __post_init__(self):
        if len(self.periods) != len(self.counts):
            raise ValueError("periods and counts differ in length")
        if np.any(np.asarray(self.counts) < 0):
            raise ValueError("counts must be non-negative")
        keys = [_month_key(p) for p in self.periods]
        if any(b <= a for a, b in zip(keys, keys[1:])):
            raise ValueError("periods must be strictly increasing")

    def __len__(self) -> int:
        return len(self.periods)

    @property
    def gaps(self) -> np.ndarray:
        return np.asarray(self.records) == 0


def resolve_mapping(header: list[str], mapping: dict[str, str | None] | None = None) -> dict[str, int]:
    """Map canonical fields to column indices.

    ``mapping`` overrides default header names per field; a ``None`` value
    marks the field as absent (allowed for ``product_id``).
    """
    wanted = dict(DEFAULT_COLUMNS)
    explicit_none = set()
    for key, col in (mapping or {}).items():
        if key not in DEFAULT_COLUMNS:
            raise SchemaError(f"unknown field {key!r} in column mapping")
        if col is None:
            explicit_none.add(key)
        wanted[key] = col
    norm = {h.strip().lower(): i for i, h in enumerate(header)}
    resolved = {}
    for key, col in wanted.items():
        if col is not None and col.strip().lower() in norm:
            resolved[key] = norm[col.strip().lower()]
    missing = [k for k in REQUIRED if k not in resolved and k not in explicit_none]
    if "date" in explicit_none or "quantity" in explicit_none:
        raise SchemaError("date and quantity columns cannot be disabled")
    if missing:
        names = ", ".join(repr(wanted[k]) for k in missing)
        raise SchemaError(f"missing required column(s): {names}")
    return resolved


def _int_field(text: str) -> int:
    value = float(text)
    if not math.isfinite(value) or value != int(value):
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


def _opt(row, idx, key, conv):
    i = idx.get(key)
    if i is None or i >= len(row):
        return None
    text = row[i].strip()
    if not text:
        return None
    return conv(text)


def parse_records(stream, mapping: dict[str, str | None] | None = None,
                  delimiter: str = ",") -> ParseResult:
    """Stream rows into records; rows lacking date or quantity are rejected with a reason."""
    reader = csv.reader(stream, delimiter=delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("file has no header row") from None
    idx = resolve_mapping(header, mapping)
    out = ParseResult([], [])
    if "units" in idx:
        out.warnings.append("units column present; values passed through without harmonization")
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            date_text = _opt(row, idx, "date", str)
            qty_text = _opt(row, idx, "quantity", str)
            if date_text is None:
                out.rejects.append(Reject(line, "missing date"))
                continue
            if qty_text is None:
                out.rejects.append(Reject(line, "missing quantity"))
                continue
            qty = _int_field(qty_text)
            if qty < 0:
                out.rejects.append(Reject(line, "negative quantity"))
                continue
            rec = RawRecord(
                line=line, date_text=date_text, quantity=qty,
                product_id=_opt(row, idx, "product_id", str),
                unit_price=_opt(row, idx, "unit_price", float),
                category=_opt(row, idx, "category", str),
                lead_time_days=_opt(row, idx, "lead_time_days", _int_field),
                fulfilled_quantity=_opt(row, idx, "fulfilled_quantity", _int_field),
                backordered_quantity=_opt(row, idx, "backordered_quantity", _int_field),
                supplier_id=_opt(row, idx, "supplier_id", str),
                readiness=_opt(row, idx, "readiness", float),
                stockout_flag=_opt(row, idx, "stockout_flag", _int_field),
                delay_flag=_opt(row, idx, "delay_flag", _int_field),
            )
        except ValueError as exc:
            out.rejects.append(Reject(line, f"invalid value: {exc}"))
            continue
        out.records.append(rec)
    return out


def parse_date(text: str, priority=DEFAULT_DATE_PRIORITY) -> date:
    text = text.strip()
    for name in priority:
        try:
            return datetime.strptime(text, DATE_FORMATS[name]).date()
        except ValueError:
            continue
    raise DateParseError(f"unrecognized date {text!r}")


def standardize_dates(records: list[RawRecord], priority=DEFAULT_DATE_PRIORITY
                      ) -> tuple[list[RawRecord], list[Reject]]:
    """Parse each record's date under the format priority; failures become rejects."""
    kept, rejects = [], []
    for rec in records:
        try:
            rec.date = parse_date(rec.date_text, priority)
        except DateParseError as exc:
            rejects.append(Reject(rec.line, str(exc)))
            continue
        rec.date_text = rec.date.isoformat()
        kept.append(rec)
    return kept, rejects


def impute_prices(records: list[RawRecord]) -> tuple[list[RawRecord], int]:
    """Fill missing unit prices with the median of the record's category.

    The category falls back to the product id when no category column exists.
    Records in categories without any observed price stay missing and flagged.
    """
    def group(rec):
        return rec.category if rec.category is not None else rec.product_id

    observed = defaultdict(list)
    for rec in records:
        if rec.unit_price is not None:
            observed[group(rec)].append(rec.unit_price)
    medians = {g: statistics.median(v) for g, v in observed.items()}
    count = 0
    for rec in records:
        if rec.unit_price is None:
            m = medians.get(group(rec))
            if m is None:
                rec.price_missing = True
            else:
                rec.unit_price = float(m)
                rec.price_imputed = True
                count += 1
    return records, count


def percentile_threshold(values, q: float = 99.0) -> float:
    """Percentile by linear interpolation between order statistics."""
    return float(np.percentile(np.asarray(values, dtype=float), q, method="linear"))


def cap_outliers(records: list[RawRecord], q: float = 99.0) -> tuple[list[RawRecord], int]:
    """Cap quantities above their month's percentile threshold.

    Capped quantities are set to ``floor(threshold)`` so they stay integral and
    never exceed the threshold.
    """
    by_month = defaultdict(list)
    for rec in records:
        by_month[(rec.date.year, rec.date.month)].append(rec)
    count = 0
    for group in by_month.values():
        threshold = percentile_threshold([r.quantity for r in group], q)
        cap = math.floor(threshold)
        for rec in group:
            if rec.quantity > threshold:
                rec.quantity = cap
                rec.capped = True
                count += 1
    return records, count


def _month_key(period: str) -> tuple[int, int]:
    y, m = period.split("-")
    return int(y), int(m)


def _month_range(first: tuple[int, int], last: tuple[int, int]):
    y, m = first
    while (y, m) <= last:
        yield y, m
        m += 1
        if m > 12:
            y, m = y + 1, 1


def aggregate_monthly(records: list[RawRecord]) -> MonthlyDemandSeries:
    """Sum quantities per calendar month; interior months without records become zero."""
    totals = defaultdict(int)
    n_rec = defaultdict(int)
    n_cap = defaultdict(int)
    n_imp = defaultdict(int)
    for rec in records:
        k = (rec.date.year, rec.date.month)
        totals[k] += rec.quantity
        n_rec[k] += 1
        n_cap[k] += rec.capped
        n_imp[k] += rec.price_imputed
    if not totals:
        empty = np.zeros(0, dtype=np.int64)
        return MonthlyDemandSeries((), empty, empty.copy(), empty.copy(), empty.copy())
    months = list(_month_range(min(totals), max(totals)))
    return MonthlyDemandSeries(
        periods=tuple(f"{y:04d}-{m:02d}" for y, m in months),
        counts=np.array([totals[k] for k in months], dtype=np.int64),
        records=np.array([n_rec[k] for k in months], dtype=np.int64),
        capped=np.array([n_cap[k] for k in months], dtype=np.int64),
        imputed=np.array([n_imp[k] for k in months], dtype=np.int64),
    )


@dataclass(frozen=True)
class DatasetSummary:
    n: int
    mean: float
    variance: float
    overdispersion_index: float | None
    lag1_autocorrelation: float | None
    gap_months: int
    lead_time_mean: float | None = None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def lag1_autocorrelation(values) -> float | None:
    y = np.asarray(values, dtype=float)
    if y.size < 2:
        return None
    c = y - y.mean()
    denom = float(np.dot(c, c))
    if denom == 0:
        return None
    return float(np.dot(c[1:], c[:-1]) / denom)


def dataset_summary(series, lead_times=None) -> DatasetSummary:
    """Sample mean, variance (ddof=1), variance-to-mean ratio and lag-1 autocorrelation.

    Undefined statistics (zero variance or zero mean) are reported as ``None``.
    """
    y = np.asarray(getattr(series, "counts", series), dtype=float)
    n = int(y.size)
    mean = float(y.mean()) if n else math.nan
    var = float(y.var(ddof=1)) if n > 1 else math.nan
    od = var / mean if n > 1 and var > 0 and mean > 0 else None
    gaps = int(np.count_nonzero(series.gaps)) if hasattr(series, "gaps") else 0
    lt = float(np.mean(lead_times)) if lead_times else None
    return DatasetSummary(n, mean, var, od, lag1_autocorrelation(y), gaps, lt)


@dataclass
class PipelineResult:
    series: MonthlyDemandSeries
    summary: DatasetSummary
    rejects: list[Reject]
    imputed: int
    capped: int
    unpriced: int
    warnings: list[str]


def run_pipeline(stream, mapping=None, *, delimiter: str = ",",
                 date_priority=DEFAULT_DATE_PRIORITY, percentile: float = 99.0) -> PipelineResult:
    parsed = parse_records(stream, mapping, delimiter)
    records, bad_dates = standardize_dates(parsed.records, date_priority)
    records, n_imp = impute_prices(records)
    records, n_cap = cap_outliers(records, percentile)
    series = aggregate_monthly(records)
    leads = [r.lead_time_days for r in records if r.lead_time_days is not None]
    warnings = list(parsed.warnings)
    if not records:
        warnings.append("no usable records; series is empty")
    return PipelineResult(
        series=series, summary=dataset_summary(series, leads),
        rejects=sorted(parsed.rejects + bad_dates, key=lambda r: r.line),
        imputed=n_imp, capped=n_cap,
        unpriced=sum(r.price_missing for r in records), warnings=warnings)


# --------------------------------------------------------------------------
# Canonical series I/O
# --------------------------------------------------------------------------

def series_to_csv(series: MonthlyDemandSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_COLUMNS)
    for i, period in enumerate(series.periods):
        w.writerow([period, int(series.counts[i]), int(series.records[i]),
                    int(series.capped[i]), int(series.imputed[i])])
    return buf.getvalue()


def write_series(series: MonthlyDemandSeries, path: str | Path) -> None:
    Path(path).write_text(series_to_csv(series), encoding="utf-8")


def read_series(stream) -> MonthlyDemandSeries:
    """Read a canonical monthly series CSV (period, quantity[, records, capped, imputed])."""
    reader = csv.DictReader(stream)
    fields_ = [f.strip().lower() for f in (reader.fieldnames or [])]
    if "period" not in fields_ or "quantity" not in fields_:
        raise SchemaError("series CSV needs 'period' and 'quantity' columns")
    periods, cols = [], defaultdict(list)
    for row in reader:
        row = {k.strip().lower(): (v or "").strip() for k, v in row.items() if k}
        _month_key(row["period"])
        periods.append(row["period"])
        for name in ("quantity", "records", "capped", "imputed"):
            cols[name].append(_int_field(row[name]) if row.get(name) else 0)
    return MonthlyDemandSeries(
        periods=tuple(periods),
        counts=np.array(cols["quantity"], dtype=np.int64),
        records=np.array(cols["records"], dtype=np.int64),
        capped=np.array(cols["capped"], dtype=np.int64),
        imputed=np.array(cols["imputed"], dtype=np.int64),
    )


def load_mapping(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise SchemaError("column mapping must be a JSON object")
    return data


def read_table(stream, delimiter: str = ",") -> list[dict[str, str]]:
    """Generic CSV reader used for every emitted table."""
    return list(csv.DictReader(stream, delimiter=delimiter))
