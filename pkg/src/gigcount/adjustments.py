"""Adjustment parameters and the cascade from registered profiles to active workers."""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .bootstrap import percentile
from .census import PlatformRecord, round_sig
from .errors import ValidationError

METHODS = ("min-max", "percentile-2.5-97.5", "normal-1.96-se", "bootstrap-percentile")
DIRECTIONS = ("multiply", "divide")
Z_95 = 1.96


@dataclass(frozen=True)
class BandedParam:
    value: float
    lower: float
    upper: float
    method: str

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown band method {self.method!r}")
        if self.lower > self.upper:
            raise ValidationError(f"band lower {self.lower} exceeds upper {self.upper}")
        # percentile-bootstrap bands need not contain the point estimate
        if self.method != "bootstrap-percentile" and not self.lower <= self.value <= self.upper:
            raise ValidationError(
                f"value {self.value} outside band [{self.lower}, {self.upper}]"
            )

    def scaled(self, k: float) -> "BandedParam":
        return BandedParam(self.value * k, self.lower * k, self.upper * k, self.method)


@dataclass(frozen=True)
class AdjustmentParams:
    ever_worked_share: BandedParam
    fulltime_share: BandedParam
    multihoming_mean: BandedParam
    multiworking_prop: BandedParam
    multiworking_direction: str = "divide"

    def __post_init__(self):
        for name in ("ever_worked_share", "fulltime_share", "multiworking_prop"):
            p = getattr(self, name)
            if not (0 <= p.lower and p.upper <= 1):
                raise ValidationError(f"{name} must lie in [0, 1]")
        if self.multihoming_mean.lower < 1:
            raise ValidationError("multihoming_mean must be >= 1")
        if self.multiworking_direction not in DIRECTIONS:
            raise ValidationError(
                f"multiworking_direction must be one of {DIRECTIONS}, "
                f"got {self.multiworking_direction!r}"
            )


def headline_preset() -> AdjustmentParams:
    """Headline parameter values; multi-working divides so the headline figures are reproduced."""
    return AdjustmentParams(
        ever_worked_share=BandedParam(0.116, 0.005, 0.368, "min-max"),
        fulltime_share=BandedParam(0.03, 0.001, 0.10, "min-max"),
        multihoming_mean=BandedParam(1.83, 1.0, 4.0, "percentile-2.5-97.5"),
        multiworking_prop=BandedParam(0.21, 0.18, 0.24, "normal-1.96-se"),
        multiworking_direction="divide",
    )


def estimate_share(records: Iterable[PlatformRecord], numerator: str = "ever_worked_count") -> BandedParam:
    """Unweighted mean of per-platform ratios numerator/registered, banded by min and max."""
    ratios = [
        Fraction(getattr(r, numerator), r.registered_count)
        for r in records
        if r.registered_count and getattr(r, numerator) is not None
    ]
    if not ratios:
        raise ValidationError(f"no platform has both registered_count and {numerator}")
    if any(q > 1 for q in ratios):
        raise ValidationError(f"{numerator} exceeds registered_count")
    mean = sum(ratios) / len(ratios)
    return BandedParam(float(mean), float(min(ratios)), float(max(ratios)), "min-max")


def share_ratios(records: Iterable[PlatformRecord], numerator: str) -> list[tuple[str, float]]:
    return [
        (r.name, float(Fraction(getattr(r, numerator), r.registered_count)))
        for r in records
        if r.registered_count and getattr(r, numerator) is not None
    ]


def multihoming_param(platform_counts: Sequence[int]) -> BandedParam:
    """Mean platforms per respondent with nearest-rank 2.5/97.5 percentile band."""
    counts = list(platform_counts)
    if not counts:
        raise ValidationError("no multi-homing responses")
    if any(c < 1 for c in counts):
        raise ValidationError("every respondent works on at least one platform")
    mean = float(Fraction(sum(Fraction(c) for c in counts), len(counts)))
    return BandedParam(
        mean, percentile(counts, 0.025), percentile(counts, 0.975), "percentile-2.5-97.5"
    )


def multiworking_param(p_hat: float, n: int) -> BandedParam:
    """Proportion with a normal-approximation band p +- 1.96*SE, clipped to [0, 1]."""
    if n < 1:
        raise ValidationError("respondent count must be >= 1")
    if not 0 <= p_hat <= 1:
        raise ValidationError("p_hat must be in [0, 1]")
    half = Z_95 * math.sqrt(p_hat * (1 - p_hat) / n)
    return BandedParam(p_hat, max(0.0, p_hat - half), min(1.0, p_hat + half), "normal-1.96-se")


def propagate_upper(observed_sum: float, predicted_upper: float,
                    ever_worked_share: float, fulltime_share: float) -> tuple[float, float, float]:
    registered = observed_sum + predicted_upper
    return registered, registered * ever_worked_share, registered * fulltime_share


def rule_of_thumb(top_platform_sum: float, assumed_share: float) -> float:
    """Market size implied by assuming the top platforms hold `assumed_share` of it."""
    if not 0 < assumed_share <= 1:
        raise ValidationError("assumed_share must be in (0, 1]")
    if top_platform_sum <= 0:
        raise ValidationError("top_platform_sum must be positive")
    return top_platform_sum / assumed_share


@dataclass(frozen=True)
class EstimateReport:
    registered_observed: float
    registered_predicted: BandedParam
    registered_total: float
    ever_worked: BandedParam
    fulltime: BandedParam
    ever_worked_after_multihoming: float
    fulltime_after_multihoming: float
    ever_worked_after_multiworking: float
    fulltime_after_multiworking: float
    upper_bounds: tuple[float, float, float]
    params: AdjustmentParams
    pessimistic_upper: bool = False
    digits: int = 2
    extras: dict = field(default_factory=dict, compare=False)

    def rounded(self) -> dict[str, float]:
        d = self.digits
        rs = lambda x: round_sig(x, d)  # noqa: E731
        obs = rs(self.registered_observed)
        return {
            "registered_observed": obs,
            "registered_predicted": rs(self.registered_predicted.value),
            # totals keep the sum of rounded parts (140M + 23M prints as 163M)
            "registered_total": obs + rs(self.registered_predicted.value),
            "ever_worked": rs(self.ever_worked.value),
            "fulltime": rs(self.fulltime.value),
            "ever_worked_after_multihoming": rs(self.ever_worked_after_multihoming),
            "fulltime_after_multihoming": rs(self.fulltime_after_multihoming),
            "ever_worked_after_multiworking": rs(self.ever_worked_after_multiworking),
            "fulltime_after_multiworking": rs(self.fulltime_after_multiworking),
            "upper_registered": obs + rs(self.registered_predicted.upper),
            "upper_ever_worked": rs(self.upper_bounds[1]),
            "upper_fulltime": rs(self.upper_bounds[2]),
        }

    def to_flat(self) -> dict:
        """Flat key-value form; every number the report prints comes from here."""
        out: dict = {}

        def banded(prefix, p: BandedParam):
            out[f"{prefix}.value"] = p.value
            out[f"{prefix}.lower"] = p.lower
            out[f"{prefix}.upper"] = p.upper
            out[f"{prefix}.method"] = p.method

        out["registered.observed"] = self.registered_observed
        banded("registered.predicted", self.registered_predicted)
        out["registered.total"] = self.registered_total
        banded("ever_worked", self.ever_worked)
        banded("fulltime", self.fulltime)
        out["ever_worked.after_multihoming"] = self.ever_worked_after_multihoming
        out["fulltime.after_multihoming"] = self.fulltime_after_multihoming
        out["ever_worked.after_multiworking"] = self.ever_worked_after_multiworking
        out["fulltime.after_multiworking"] = self.fulltime_after_multiworking
        out["upper.registered"], out["upper.ever_worked"], out["upper.fulltime"] = self.upper_bounds
        out["upper.pessimistic"] = self.pessimistic_upper
        banded("params.ever_worked_share", self.params.ever_worked_share)
        banded("params.fulltime_share", self.params.fulltime_share)
        banded("params.multihoming_mean", self.params.multihoming_mean)
        banded("params.multiworking_prop", self.params.multiworking_prop)
        out["params.multiworking_direction"] = self.params.multiworking_direction
        out["rounding.digits"] = self.digits
        for k, v in self.rounded().items():
            out[f"rounded.{k}"] = v
        out.update(self.extras)
        return out


def cascade(observed_sum: float, predicted: BandedParam, params: AdjustmentParams,
            pessimistic_upper: bool = False, digits: int = 2) -> EstimateReport:
    """Registered total -> active workers -> multi-homing -> multi-working."""
    total = observed_sum + predicted.value
    ew_share, ft_share = params.ever_worked_share, params.fulltime_share
    ever = ew_share.scaled(total)
    full = ft_share.scaled(total)

    mh = params.multihoming_mean.value
    ever_mh = ever.value / mh
    full_mh = full.value / mh

    factor = 1 + params.multiworking_prop.value
    if params.multiworking_direction == "multiply":
        ever_mw, full_mw = ever_mh * factor, full_mh * factor
    else:
        ever_mw, full_mw = ever_mh / factor, full_mh / factor

    if pessimistic_upper:
        uppers = propagate_upper(observed_sum, predicted.upper, ew_share.upper, ft_share.upper)
    else:
        uppers = propagate_upper(observed_sum, predicted.upper, ew_share.value, ft_share.value)

    return EstimateReport(
        registered_observed=observed_sum,
        registered_predicted=predicted,
        registered_total=total,
        ever_worked=ever,
        fulltime=full,
        ever_worked_after_multihoming=ever_mh,
        fulltime_after_multihoming=full_mh,
        ever_worked_after_multiworking=ever_mw,
        fulltime_after_multiworking=full_mw,
        upper_bounds=uppers,
        params=params,
        pessimistic_upper=pessimistic_upper,
        digits=digits,
    )


# ---------------------------------------------------------------------------
# parameter file: one INI section per parameter

_PARAM_SECTIONS = ("ever_worked_share", "fulltime_share", "multihoming_mean", "multiworking_prop")


def load_adjustment_params(text: str, direction: Optional[str] = None) -> AdjustmentParams:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"adjustment parameter file: {exc}") from None
    values = {}
    for name in _PARAM_SECTIONS:
        if name not in cp:
            raise ValidationError(f"adjustment parameter file lacks section [{name}]")
        sec = cp[name]
        try:
            values[name] = BandedParam(
                float(sec["value"]), float(sec["lower"]), float(sec["upper"]), sec["method"]
            )
        except (KeyError, ValueError) as exc:
            raise ValidationError(f"[{name}]: {exc}") from None
    if direction is None:
        direction = cp.get("multiworking", "direction", fallback="divide")
    return AdjustmentParams(**values, multiworking_direction=direction)


def dump_adjustment_params(params: AdjustmentParams) -> str:
    cp = configparser.ConfigParser()
    for name in _PARAM_SECTIONS:
        p = getattr(params, name)
        cp[name] = {"value": repr(p.value), "lower": repr(p.lower),
                    "upper": repr(p.upper), "method": p.method}
    cp["multiworking"] = {"direction": params.multiworking_direction}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
