"""Pipeline configuration: an INI file with one section per stage."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from datetime import date
from pathlib import Path
from typing import Optional

from .adjustments import DIRECTIONS, BandedParam
from .errors import ValidationError
from .gbt import Hyperparams, default_grid, grid_from_lists

ACQUISITION_MODES = ("replay", "live", "off")

# fields that change how a run executes but never what it computes
EXECUTION_ONLY = ("out_dir", "bootstrap_workers")


@dataclass(frozen=True)
class PipelineConfig:
    census_path: Path
    split_seed: int
    bootstrap_seed: int
    out_dir: Path = Path("out")
    acquisition_mode: str = "replay"
    fixture_dir: Optional[Path] = None
    trends_url: str = ""
    siterank_url: str = ""
    rate_limit_requests: int = 1
    rate_limit_interval: float = 2.0
    anchor: str = "upwork.com"
    window_start: date = date(2019, 9, 1)
    window_end: date = date(2020, 9, 1)
    train_fraction: float = 0.8
    grid: tuple[Hyperparams, ...] = field(default_factory=lambda: tuple(default_grid()))
    bootstrap_replicates: int = 1000
    bootstrap_level: float = 0.95
    bootstrap_workers: int = 1
    adjustments_file: Optional[Path] = None
    ever_worked_share: Optional[BandedParam] = None
    fulltime_share: Optional[BandedParam] = None
    multihoming_responses: Optional[Path] = None
    multihoming: Optional[BandedParam] = None
    multiworking_p: Optional[float] = None
    multiworking_n: Optional[int] = None
    multiworking_direction: str = "divide"
    pessimistic_upper: bool = False
    rule_of_thumb_platforms: tuple[str, ...] = ()
    rule_of_thumb_share: float = 0.5
    rule_of_thumb_top_sum: Optional[float] = None
    stub_observed: Optional[float] = None
    stub_predicted: Optional[BandedParam] = None
    digits: int = 2
    source: str = ""
    written_paths: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.acquisition_mode not in ACQUISITION_MODES:
            raise ValidationError(f"acquisition mode must be one of {ACQUISITION_MODES}")
        if self.acquisition_mode == "replay" and self.fixture_dir is None:
            raise ValidationError("replay mode needs [acquisition] fixture_dir")
        if not 0 < self.bootstrap_level < 1:
            raise ValidationError("bootstrap level must be in (0, 1)")
        if self.bootstrap_replicates < 1:
            raise ValidationError("bootstrap replicates must be >= 1")
        if self.multiworking_direction not in DIRECTIONS:
            raise ValidationError(f"multiworking_direction must be one of {DIRECTIONS}")
        if self.window_end < self.window_start:
            raise ValidationError("trends window end precedes start")
        if self.digits < 1:
            raise ValidationError("rounding digits must be >= 1")
        if (self.stub_observed is None) != (self.stub_predicted is None):
            raise ValidationError("[stub] needs both observed and predicted")

    def with_overrides(self, seed: Optional[int] = None, out_dir: Optional[Path] = None,
                       mode: Optional[str] = None) -> "PipelineConfig":
        changes = {}
        if seed is not None:
            changes.update(split_seed=seed, bootstrap_seed=seed)
        if out_dir is not None:
            changes["out_dir"] = Path(out_dir)
        if mode is not None:
            changes["acquisition_mode"] = mode
        return replace(self, **changes)

    def record(self) -> dict[str, str]:
        """Config as flat strings for report headers; paths kept as written."""
        out = {}
        for f in fields(self):
            if f.name in EXECUTION_ONLY or f.name in ("source", "written_paths"):
                continue
            v = getattr(self, f.name)
            if f.name == "grid":
                out["grid.size"] = str(len(v))
                continue
            if isinstance(v, BandedParam):
                v = f"{v.value!r},{v.lower!r},{v.upper!r},{v.method}"
            elif isinstance(v, tuple):
                v = ",".join(v)
            elif isinstance(v, Path):
                v = self.written_paths.get(f.name, str(v))
            elif isinstance(v, float):
                v = repr(v)
            out[f.name] = "" if v is None else str(v)
        return out


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _banded(text: str, default_method: str) -> BandedParam:
    parts = [t.strip() for t in text.split(",")]
    if len(parts) not in (3, 4):
        raise ValidationError(f"expected 'value, lower, upper[, method]', got {text!r}")
    method = parts[3] if len(parts) == 4 else default_method
    return BandedParam(float(parts[0]), float(parts[1]), float(parts[2]), method)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"not a boolean: {text!r}")


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(path.read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise ValidationError(f"{path}: {exc}") from None
    base = path.parent
    written: dict[str, str] = {}

    def get(section, key, default=None):
        if cp.has_option(section, key):
            v = cp.get(section, key).strip()
            return v if v != "" else default
        return default

    def get_path(section, key, name):
        v = get(section, key)
        if v is None:
            return None
        written[name] = v
        p = Path(v)
        return p if p.is_absolute() else base / p

    kw: dict = {}
    census = get_path("census", "path", "census_path")
    if census is None:
        raise ValidationError(f"{path}: [census] path is required")
    kw["census_path"] = census

    for name, section, key in (("split_seed", "train", "split_seed"),
                               ("bootstrap_seed", "bootstrap", "seed")):
        v = get(section, key)
        if v is None:
            raise ValidationError(f"{path}: [{section}] {key} is required (no implicit seeding)")
        kw[name] = int(v)

    try:
        out = get_path("output", "dir", "out_dir")
        if out is not None:
            kw["out_dir"] = out
        if (v := get("output", "digits")) is not None:
            kw["digits"] = int(v)

        if (v := get("acquisition", "mode")) is not None:
            kw["acquisition_mode"] = v
        kw["fixture_dir"] = get_path("acquisition", "fixture_dir", "fixture_dir")
        kw["trends_url"] = get("acquisition", "trends_url", "")
        kw["siterank_url"] = get("acquisition", "siterank_url", "")
        if (v := get("acquisition", "requests_per_interval")) is not None:
            kw["rate_limit_requests"] = int(v)
        if (v := get("acquisition", "interval_seconds")) is not None:
            kw["rate_limit_interval"] = float(v)

        if (v := get("trends", "anchor")) is not None:
            kw["anchor"] = v
        if (v := get("trends", "start")) is not None:
            kw["window_start"] = date.fromisoformat(v)
        if (v := get("trends", "end")) is not None:
            kw["window_end"] = date.fromisoformat(v)

        if (v := get("train", "fraction")) is not None:
            kw["train_fraction"] = float(v)
        axes = {}
        for key, cast in (("learning_rate", float), ("max_depth", int), ("num_rounds", int),
                          ("reg_lambda", float), ("gamma", float), ("min_child_weight", float),
                          ("max_delta_step", float)):
            if (v := get("train", key)) is not None:
                axes[key] = [cast(x) for x in _floats(v)]
        if axes:
            # unspecified axes: default grid values, else the Hyperparams default
            base_grid, defaults = default_grid(), Hyperparams()
            full = {}
            for f in fields(Hyperparams):
                seen = sorted({getattr(h, f.name) for h in base_grid})
                full[f.name] = axes.get(f.name, seen if len(seen) > 1 else [getattr(defaults, f.name)])
            kw["grid"] = tuple(grid_from_lists(**full))

        if (v := get("bootstrap", "replicates")) is not None:
            kw["bootstrap_replicates"] = int(v)
        if (v := get("bootstrap", "level")) is not None:
            kw["bootstrap_level"] = float(v)
        if (v := get("bootstrap", "workers")) is not None:
            kw["bootstrap_workers"] = int(v)

        kw["adjustments_file"] = get_path("adjustments", "params_file", "adjustments_file")
        if (v := get("adjustments", "ever_worked_share")) not in (None, "estimate"):
            kw["ever_worked_share"] = _banded(v, "min-max")
        if (v := get("adjustments", "fulltime_share")) not in (None, "estimate"):
            kw["fulltime_share"] = _banded(v, "min-max")
        kw["multihoming_responses"] = get_path("adjustments", "multihoming_responses",
                                               "multihoming_responses")
        if (v := get("adjustments", "multihoming")) is not None:
            kw["multihoming"] = _banded(v, "percentile-2.5-97.5")
        if (v := get("adjustments", "multiworking_p")) is not None:
            kw["multiworking_p"] = float(v)
        if (v := get("adjustments", "multiworking_n")) is not None:
            kw["multiworking_n"] = int(v)
        if (v := get("adjustments", "multiworking_direction")) is not None:
            kw["multiworking_direction"] = v
        if (v := get("adjustments", "pessimistic_upper")) is not None:
            kw["pessimistic_upper"] = _bool(v)
        if (v := get("adjustments", "rule_of_thumb_platforms")) is not None:
            kw["rule_of_thumb_platforms"] = tuple(t.strip() for t in v.split(",") if t.strip())
        if (v := get("adjustments", "rule_of_thumb_share")) is not None:
            kw["rule_of_thumb_share"] = float(v)

        if (v := get("adjustments", "rule_of_thumb_top_sum")) is not None:
            kw["rule_of_thumb_top_sum"] = float(v)

        if (v := get("stub", "observed")) is not None:
            kw["stub_observed"] = float(v)
        if (v := get("stub", "predicted")) is not None:
            kw["stub_predicted"] = BandedParam(
                float(v),
                float(get("stub", "predicted_lower", v)),
                float(get("stub", "predicted_upper", v)),
                "bootstrap-percentile",
            )
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None

    return PipelineConfig(**kw, source=str(path), written_paths=written)
