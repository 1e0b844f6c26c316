"""Model features: trends normalization, missing-value imputation, log/standardize transform."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Optional, Sequence

import numpy as np

from .census import PlatformRecord
from .errors import ValidationError

FEATURE_NAMES = ("alexa_rank", "monthly_uniques", "trends_sum", "trends_median")
MAX_BATCH_TERMS = 5
TRENDS_CACHE_HEADER = ("site", "date", "value", "anchor", "anchor_zero")
FEATURE_MATRIX_HEADER = ("name",) + FEATURE_NAMES


@dataclass(frozen=True)
class TrendsSeries:
    site: str
    dates: tuple[date, ...]
    values: tuple[float, ...]
    anchor_site: str = ""
    is_normalized: bool = False
    # dates on which the anchor's raw value was zero (normalized value forced to 0)
    flagged_dates: tuple[date, ...] = ()

    def __post_init__(self):
        if len(self.dates) != len(self.values):
            raise ValidationError(f"{self.site}: dates and values differ in length")
        for a, b in zip(self.dates, self.dates[1:]):
            if not a < b:
                raise ValidationError(f"{self.site}: dates not strictly increasing at {b}")
        for v in self.values:
            if not (v >= 0 and math.isfinite(v)):
                raise ValidationError(f"{self.site}: invalid index value {v!r}")


def normalize_trends_batch(batch: Sequence[TrendsSeries], anchor: str) -> list[TrendsSeries]:
    """Divide every series in one query batch by the anchor series, date by date."""
    if len(batch) > MAX_BATCH_TERMS:
        raise ValidationError(f"batch has {len(batch)} series; at most {MAX_BATCH_TERMS} allowed")
    anchors = [s for s in batch if s.site == anchor]
    if not anchors:
        raise ValidationError(f"anchor {anchor!r} missing from batch")
    ref = anchors[0]
    for s in batch:
        if s.dates != ref.dates:
            raise ValidationError(f"{s.site}: date grid differs from anchor {anchor!r}")

    flagged = tuple(d for d, a in zip(ref.dates, ref.values) if a == 0)
    out = []
    for s in batch:
        values = tuple(
            raw / a if a > 0 else 0.0 for raw, a in zip(s.values, ref.values)
        )
        out.append(
            TrendsSeries(
                site=s.site,
                dates=s.dates,
                values=values,
                anchor_site=anchor,
                is_normalized=True,
                flagged_dates=flagged,
            )
        )
    return out


def summarize_trends(series: TrendsSeries) -> tuple[float, float]:
    """Sum and median of a normalized series."""
    if not series.values:
        raise ValidationError(f"{series.site}: empty trends series")
    xs = sorted(series.values)
    n = len(xs)
    median = xs[n // 2] if n % 2 else (xs[n // 2 - 1] + xs[n // 2]) / 2.0
    return math.fsum(xs), median


@dataclass(frozen=True)
class FeatureVector:
    alexa_rank: float
    monthly_uniques: float
    trends_sum: float
    trends_median: float
    imputed: tuple[bool, bool, bool, bool] = (False, False, False, False)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.alexa_rank, self.monthly_uniques, self.trends_sum, self.trends_median)


def impute_missing(record: PlatformRecord, census_max_alexa: int) -> FeatureVector:
    """Fill absent features: worst observed Alexa rank, zero for everything else."""
    fills = (census_max_alexa, 0, 0.0, 0.0)
    values = []
    flags = []
    for name, fill in zip(FEATURE_NAMES, fills):
        v = getattr(record, name)
        flags.append(v is None)
        values.append(float(fill if v is None else v))
    return FeatureVector(*values, imputed=tuple(flags))


def census_max_alexa(records: Iterable[PlatformRecord]) -> int:
    ranks = [r.alexa_rank for r in records if r.alexa_rank is not None]
    if not ranks:
        raise ValidationError("no record has alexa_rank; cannot impute missing ranks")
    return max(ranks)


def impute_census(records: Sequence[PlatformRecord]) -> list[FeatureVector]:
    records = list(records)
    ranks = [r.alexa_rank for r in records if r.alexa_rank is not None]
    # no ranks anywhere: every rank is imputed to the same constant
    max_rank = max(ranks) if ranks else 1
    return [impute_missing(r, max_rank) for r in records]


def as_matrix(rows) -> np.ndarray:
    if isinstance(rows, np.ndarray):
        m = rows.astype(float, copy=False)
    else:
        rows = list(rows)
        if rows and isinstance(rows[0], FeatureVector):
            m = np.array([r.as_tuple() for r in rows], dtype=float)
        else:
            m = np.asarray(rows, dtype=float)
    if m.ndim != 2:
        raise ValidationError(f"feature matrix must be 2-D, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class TransformParams:
    """Per-feature log(x + offset) followed by standardization (population stddev)."""

    means: tuple[float, ...]
    stds: tuple[float, ...]
    offset: float = 1.0
    names: tuple[str, ...] = field(default=FEATURE_NAMES)

    def __post_init__(self):
        if len(self.means) != len(self.stds):
            raise ValidationError("means and stds differ in length")
        if any(not s > 0 for s in self.stds):
            raise ValidationError("every feature stddev must be positive")

    def to_dict(self) -> dict:
        return {
            "offset": self.offset,
            "names": list(self.names),
            "means": list(self.means),
            "stds": list(self.stds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransformParams":
        return cls(
            means=tuple(float(v) for v in d["means"]),
            stds=tuple(float(v) for v in d["stds"]),
            offset=float(d["offset"]),
            names=tuple(d["names"]),
        )


def fit_transform(rows) -> tuple[TransformParams, np.ndarray]:
    m = as_matrix(rows)
    if m.shape[0] < 2:
        raise ValidationError("fit_transform needs at least 2 rows")
    if (m < 0).any():
        raise ValidationError("features must be non-negative before the log transform")
    logged = np.log(m + 1.0)
    constant = [j for j in range(m.shape[1]) if logged[:, j].max() == logged[:, j].min()]
    if constant:
        raise ValidationError(f"constant feature column(s) {constant}; stddev would be 0")
    means = logged.mean(axis=0)
    stds = logged.std(axis=0)
    names = FEATURE_NAMES if m.shape[1] == len(FEATURE_NAMES) else tuple(
        f"x{j}" for j in range(m.shape[1])
    )
    params = TransformParams(
        means=tuple(float(v) for v in means),
        stds=tuple(float(v) for v in stds),
        names=names,
    )
    return params, (logged - means) / stds


def apply_transform(params: TransformParams, rows) -> np.ndarray:
    m = as_matrix(rows)
    if m.shape[1] != len(params.means):
        raise ValidationError(
            f"expected {len(params.means)} features, got {m.shape[1]}"
        )
    means = np.asarray(params.means)
    stds = np.asarray(params.stds)
    return (np.log(m + params.offset) - means) / stds


def inverse_transform(params: TransformParams, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.exp(z * np.asarray(params.stds) + np.asarray(params.means)) - params.offset


# ---------------------------------------------------------------------------
# file formats


def write_trends_cache(series: Iterable[TrendsSeries]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRENDS_CACHE_HEADER)
    for s in series:
        flagged = set(s.flagged_dates)
        for d, v in zip(s.dates, s.values):
            w.writerow([s.site, d.isoformat(), repr(float(v)), s.anchor_site, int(d in flagged)])
    return buf.getvalue()


def read_trends_cache(text: str) -> dict[str, TrendsSeries]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != TRENDS_CACHE_HEADER:
        raise ValidationError("trends cache has an unexpected header")
    grouped: dict[str, list] = {}
    for row in reader:
        grouped.setdefault(row[0], []).append(row)
    out = {}
    for site, rows in grouped.items():
        out[site] = TrendsSeries(
            site=site,
            dates=tuple(date.fromisoformat(r[1]) for r in rows),
            values=tuple(float(r[2]) for r in rows),
            anchor_site=rows[0][3],
            is_normalized=True,
            flagged_dates=tuple(date.fromisoformat(r[1]) for r in rows if r[4] == "1"),
        )
    return out


def write_feature_matrix(names: Sequence[str], matrix) -> str:
    m = as_matrix(matrix)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FEATURE_MATRIX_HEADER)
    for name, row in zip(names, m):
        w.writerow([name] + [repr(float(v)) for v in row])
    return buf.getvalue()


def read_feature_matrix(text: str) -> tuple[list[str], np.ndarray]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != FEATURE_MATRIX_HEADER:
        raise ValidationError("feature matrix has an unexpected header")
    names, rows = [], []
    for row in reader:
        names.append(row[0])
        rows.append([float(v) for v in row[1:]])
    return names, np.array(rows, dtype=float).reshape(len(rows), len(FEATURE_NAMES))
