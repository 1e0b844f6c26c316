"""Platform census: record types, CSV parsing and descriptive statistics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from datetime import date
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Optional

from .errors import ValidationError

CENSUS_HEADER = (
    "name",
    "url",
    "registered_count",
    "ever_worked_count",
    "fulltime_count",
    "alexa_rank",
    "monthly_uniques",
    "trends_sum",
    "trends_median",
    "source",
    "observed_at",
)

INT_FIELDS = (
    "registered_count",
    "ever_worked_count",
    "fulltime_count",
    "alexa_rank",
    "monthly_uniques",
)
FLOAT_FIELDS = ("trends_sum", "trends_median")
NUMERIC_FIELDS = INT_FIELDS + FLOAT_FIELDS

# (label, lower inclusive, upper exclusive)
SIZE_BUCKETS = (
    ("<10k", 0, 10_000),
    ("10k-100k", 10_000, 100_000),
    ("100k-1m", 100_000, 1_000_000),
    ("1m-10m", 1_000_000, 10_000_000),
    (">10m", 10_000_000, math.inf),
)


class CensusError(ValidationError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class PlatformRecord:
    name: str
    url: str
    registered_count: Optional[int] = None
    ever_worked_count: Optional[int] = None
    fulltime_count: Optional[int] = None
    alexa_rank: Optional[int] = None
    monthly_uniques: Optional[int] = None
    trends_sum: Optional[float] = None
    trends_median: Optional[float] = None
    source: str = ""
    observed_at: Optional[date] = None

    def __post_init__(self):
        if not self.name:
            raise CensusError("platform name is empty")
        if not self.url:
            raise CensusError(f"{self.name}: url is empty")
        for f in NUMERIC_FIELDS:
            v = getattr(self, f)
            if v is None:
                continue
            if isinstance(v, float) and not math.isfinite(v):
                raise CensusError(f"{self.name}: {f} is not finite")
            if v < 0:
                raise CensusError(f"{self.name}: negative count in {f} ({v})")
        if self.alexa_rank is not None and self.alexa_rank < 1:
            raise CensusError(f"{self.name}: alexa_rank must be >= 1")
        reg, ever, full = self.registered_count, self.ever_worked_count, self.fulltime_count
        if reg is not None and ever is not None and ever > reg:
            raise CensusError(
                f"{self.name}: ever_worked_count {ever} exceeds registered_count {reg}"
            )
        if ever is not None and full is not None and full > ever:
            raise CensusError(
                f"{self.name}: fulltime_count {full} exceeds ever_worked_count {ever}"
            )
        if ever is None and reg is not None and full is not None and full > reg:
            raise CensusError(
                f"{self.name}: fulltime_count {full} exceeds registered_count {reg}"
            )

    def replace(self, **changes) -> "PlatformRecord":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return PlatformRecord(**values)


@dataclass(frozen=True)
class Census:
    records: tuple[PlatformRecord, ...]
    source: str = ""
    collected_at: Optional[date] = None

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.name in seen:
                raise CensusError(f"duplicate platform name {r.name!r}")
            seen.add(r.name)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def observed(self) -> list[PlatformRecord]:
        return [r for r in self.records if r.registered_count is not None]

    @property
    def unobserved(self) -> list[PlatformRecord]:
        return [r for r in self.records if r.registered_count is None]

    def require_observed(self) -> None:
        if not self.observed:
            raise CensusError("census has no record with registered_count; cannot train")


@dataclass(frozen=True)
class SummaryRow:
    n: int
    mean: float
    median: float
    min: float
    max: float


def _parse_cell(field: str, text: str, line: int):
    if text == "":
        return None
    try:
        if field in INT_FIELDS:
            return int(text)
        if field in FLOAT_FIELDS:
            return float(text)
        if field == "observed_at":
            return date.fromisoformat(text)
    except ValueError:
        raise CensusError(f"malformed {field} value {text!r}", line) from None
    return text


def parse_census(raw: bytes | str, source: str = "") -> Census:
    """Parse and validate a census file.

    Errors carry the 1-based line number of the offending row (the header
    is line 1).
    """
    text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise CensusError("empty census file") from None
    if tuple(header) != CENSUS_HEADER:
        raise CensusError(f"header must be {','.join(CENSUS_HEADER)}", 1)

    records = []
    seen: dict[str, int] = {}
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CENSUS_HEADER):
            raise CensusError(
                f"expected {len(CENSUS_HEADER)} columns, found {len(row)}", line
            )
        values = {f: _parse_cell(f, cell, line) for f, cell in zip(CENSUS_HEADER, row)}
        for key in ("name", "url", "source"):
            values[key] = values[key] or ""
        if values["name"] in seen:
            raise CensusError(
                f"duplicate platform name {values['name']!r} "
                f"(first seen on line {seen[values['name']]})",
                line,
            )
        try:
            record = PlatformRecord(**values)
        except CensusError as exc:
            raise CensusError(str(exc), line) from None
        seen[record.name] = line
        records.append(record)

    dates = [r.observed_at for r in records if r.observed_at is not None]
    return Census(tuple(records), source=source, collected_at=max(dates) if dates else None)


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, date):
        return value.isoformat()
    return str(value)


def serialize_census(census: Census | Iterable[PlatformRecord]) -> str:
    records = census.records if isinstance(census, Census) else census
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CENSUS_HEADER)
    for r in records:
        writer.writerow([_format_cell(getattr(r, f)) for f in CENSUS_HEADER])
    return buf.getvalue()


def _median(sorted_values: list[float]) -> float:
    n = len(sorted_values)
    mid = n // 2
    if n % 2:
        return float(sorted_values[mid])
    return (sorted_values[mid - 1] + sorted_values[mid]) / 2.0


def summarize_values(values: Iterable[float]) -> SummaryRow:
    xs = sorted(float(v) for v in values)
    if not xs:
        raise ValidationError("no data: cannot summarize an empty selection")
    return SummaryRow(
        n=len(xs),
        mean=math.fsum(xs) / len(xs),
        median=_median(xs),
        min=xs[0],
        max=xs[-1],
    )


def summary_stats(census: Census, field: str) -> SummaryRow:
    if field not in NUMERIC_FIELDS:
        raise ValidationError(f"unknown numeric field {field!r}")
    values = [getattr(r, field) for r in census.records]
    present = [v for v in values if v is not None]
    if not present:
        raise ValidationError(f"no data: no record has {field}")
    return summarize_values(present)


def bucket_counts(census: Census) -> list[tuple[str, Optional[SummaryRow]]]:
    """Registered-worker summaries per size bucket. Empty buckets map to None."""
    counts = [r.registered_count for r in census.records if r.registered_count is not None]
    if not counts:
        raise ValidationError("no data: no record has registered_count")
    out = []
    for label, lo, hi in SIZE_BUCKETS:
        inside = [c for c in counts if lo <= c < hi]
        out.append((label, summarize_values(inside) if inside else None))
    return out


def round_sig(x: float, digits: int = 2) -> float:
    """Round to `digits` significant digits, ties away from zero."""
    if digits < 1:
        raise ValueError("digits must be >= 1")
    if x == 0 or not math.isfinite(x):
        return x
    d = Decimal(repr(float(x)))
    exponent = d.adjusted() - digits + 1
    return float(d.quantize(Decimal(1).scaleb(exponent), rounding=ROUND_HALF_UP))
