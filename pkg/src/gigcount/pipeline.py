"""Pipeline stages with file handoffs: ingest -> enrich -> train -> estimate -> report/figures.

Every stage reads its inputs from ``config.out_dir`` (plus the census and
fixtures named in the config) and writes plain-text outputs there. No stage
records wall-clock time, so a rerun with the same config is byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, gbt
from .acquisition import (
    FixtureStore,
    LiveTransport,
    RateLimiter,
    ReplayTransport,
    fetch_siterank,
    normalized_trends,
    plan_batches,
    trends_features,
)
from .adjustments import (
    AdjustmentParams,
    BandedParam,
    EstimateReport,
    cascade,
    estimate_share,
    load_adjustment_params,
    multihoming_param,
    multiworking_param,
    rule_of_thumb,
    share_ratios,
)
from .bootstrap import bootstrap_predict_sum, write_replicate_sums
from .census import (
    NUMERIC_FIELDS,
    Census,
    bucket_counts,
    parse_census,
    serialize_census,
    summary_stats,
)
from .config import PipelineConfig
from .errors import ValidationError
from .features import (
    apply_transform,
    fit_transform,
    impute_census,
    read_feature_matrix,
    write_feature_matrix,
    write_trends_cache,
    FEATURE_NAMES,
)

log = logging.getLogger(__name__)

CENSUS_COPY = "census.csv"
SUMMARY = "summary.csv"
CENSUS_ENRICHED = "census_enriched.csv"
SUMMARY_ENRICHED = "summary_enriched.csv"
TRENDS_CACHE = "trends_normalized.csv"
FEATURES_RAW = "features_raw.csv"
FEATURE_FLAGS = "feature_flags.csv"
FEATURES_TRANSFORMED = "features_transformed.csv"
MODEL = "model.json"
GRID_TRIALS = "grid_trials.csv"
PREDICTIONS = "predictions.csv"
REPLICATES = "replicate_sums.csv"
REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"
FIG1 = "fig1_registered_hist.csv"
FIG2 = "fig2_registered_platforms.csv"
FIG3 = "fig3_ever_worked_ratios.csv"
FIG4 = "fig4_fulltime_ratios.csv"

HIST_BIN_WIDTH = 0.5  # log10 units

STAGE_OF = {
    CENSUS_COPY: "ingest",
    CENSUS_ENRICHED: "enrich",
    FEATURES_RAW: "enrich",
    MODEL: "train",
    PREDICTIONS: "estimate",
    REPORT_JSON: "estimate",
}


def fmt(x) -> str:
    """Number formatting shared by every emitted table."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".10g")


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")
    return path


def _require(cfg: PipelineConfig, name: str) -> Path:
    path = cfg.out_dir / name
    if not path.exists():
        stage = STAGE_OF.get(name, "the previous stage")
        raise ValidationError(f"{path} not found; run `gigcount {stage}` first")
    return path


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def load_census(path: Path) -> Census:
    if not path.exists():
        raise ValidationError(f"census file not found: {path}")
    return parse_census(path.read_bytes(), source=str(path))


# ---------------------------------------------------------------------------
# ingest


SUMMARY_HEADER = ("variable", "n", "mean", "median", "min", "max")


def summary_table(census: Census) -> str:
    """Summary of present values with size buckets; empty size buckets get n=0."""
    rows = []
    for field in ("alexa_rank", "monthly_uniques", "trends_sum", "trends_median",
                  "registered_count"):
        present = [getattr(r, field) for r in census if getattr(r, field) is not None]
        if not present:
            continue
        s = summary_stats(census, field)
        rows.append([field, s.n, fmt(s.mean), fmt(s.median), fmt(s.min), fmt(s.max)])
        if field == "registered_count":
            for label, b in bucket_counts(census):
                if b is None:
                    rows.append([f"registered_count[{label}]", 0, "", "", "", ""])
                else:
                    rows.append([f"registered_count[{label}]", b.n, fmt(b.mean),
                                 fmt(b.median), fmt(b.min), fmt(b.max)])
    for field in ("ever_worked_count", "fulltime_count"):
        if any(getattr(r, field) is not None for r in census):
            s = summary_stats(census, field)
            rows.append([field, s.n, fmt(s.mean), fmt(s.median), fmt(s.min), fmt(s.max)])
    return _csv(rows, SUMMARY_HEADER)


def ingest(cfg: PipelineConfig) -> str:
    census = load_census(cfg.census_path)
    _write(cfg.out_dir / CENSUS_COPY, serialize_census(census))
    table = summary_table(census)
    _write(cfg.out_dir / SUMMARY, table)
    log.info("ingested %d platforms (%d with registered counts)",
             len(census), len(census.observed))
    return table


# ---------------------------------------------------------------------------
# enrich


def make_transport(cfg: PipelineConfig):
    if cfg.acquisition_mode == "replay":
        return ReplayTransport(FixtureStore(cfg.fixture_dir))
    store = FixtureStore(cfg.fixture_dir) if cfg.fixture_dir else None
    limiter = RateLimiter(cfg.rate_limit_requests, cfg.rate_limit_interval)
    return LiveTransport({"trends": cfg.trends_url, "siterank": cfg.siterank_url},
                         store=store, limiter=limiter)


def acquire_features(census: Census, cfg: PipelineConfig, transport) -> tuple[Census, str]:
    """Replace the four feature columns with freshly acquired values."""
    urls = [r.url for r in census]
    sites = [u for u in urls if u != cfg.anchor]
    plan = plan_batches(sites, cfg.anchor, (cfg.window_start, cfg.window_end))
    series = normalized_trends(plan, transport)
    summaries = trends_features(series)
    records = []
    for r in census:
        rank, uniques = fetch_siterank(r.url, transport)
        t_sum, t_median = summaries.get(r.url, (None, None))
        records.append(r.replace(alexa_rank=rank, monthly_uniques=uniques,
                                 trends_sum=t_sum, trends_median=t_median))
    ordered = [series[u] for u in [cfg.anchor] + sites if u in series]
    return Census(tuple(records), census.source, census.collected_at), write_trends_cache(ordered)


def enrich(cfg: PipelineConfig) -> Census:
    census = load_census(_require(cfg, CENSUS_COPY))
    if cfg.acquisition_mode != "off":
        census, cache = acquire_features(census, cfg, make_transport(cfg))
        _write(cfg.out_dir / TRENDS_CACHE, cache)
    _write(cfg.out_dir / CENSUS_ENRICHED, serialize_census(census))
    _write(cfg.out_dir / SUMMARY_ENRICHED, summary_table(census))

    vectors = impute_census(census.records)
    names = [r.name for r in census]
    _write(cfg.out_dir / FEATURES_RAW, write_feature_matrix(names, vectors))
    _write(cfg.out_dir / FEATURE_FLAGS, _csv(
        [[n] + [int(f) for f in v.imputed] for n, v in zip(names, vectors)],
        ("name",) + tuple(f"{f}_imputed" for f in FEATURE_NAMES)))
    return census


# ---------------------------------------------------------------------------
# train


def _training_data(cfg: PipelineConfig):
    census = load_census(_require(cfg, CENSUS_ENRICHED))
    names, X = read_feature_matrix(_require(cfg, FEATURES_RAW).read_text(encoding="utf-8"))
    if names != [r.name for r in census]:
        raise ValidationError(f"{FEATURES_RAW} does not match {CENSUS_ENRICHED}; rerun enrich")
    census.require_observed()
    observed = np.array([r.registered_count is not None for r in census])
    y = np.array([r.registered_count or 0 for r in census], dtype=float)
    return census, names, X, observed, y


def train(cfg: PipelineConfig) -> tuple[gbt.GbtModel, gbt.GridSearchResult]:
    census, names, X, observed, y = _training_data(cfg)
    params, Z = fit_transform(X[observed])
    result = gbt.grid_search(Z, y[observed], cfg.grid, cfg.split_seed, cfg.train_fraction)
    model = gbt.fit(Z, y[observed], result.best).with_transform(params)
    _write(cfg.out_dir / MODEL, model.dumps())

    fields = ("learning_rate", "max_depth", "num_rounds", "reg_lambda", "gamma",
              "min_child_weight", "max_delta_step")
    rows = [[i] + [fmt(getattr(hp, f)) for f in fields] + [repr(score)]
            for i, (hp, score) in enumerate(result.all_trials)]
    _write(cfg.out_dir / GRID_TRIALS, _csv(rows, ("trial",) + fields + ("validation_rmse",)))
    _write(cfg.out_dir / FEATURES_TRANSFORMED,
           write_feature_matrix(names, apply_transform(params, X)))

    meta = {
        "validation_rmse": result.validation_rmse,
        "n_observed": int(observed.sum()),
        "n_train": len(result.train_index),
        "n_validation": len(result.validation_index),
    }
    _write(cfg.out_dir / "train_meta.json", json.dumps(meta, indent=1, sort_keys=True) + "\n")
    log.info("best %s, validation RMSE %.4g", result.best, result.validation_rmse)
    return model, result


# ---------------------------------------------------------------------------
# estimate


def adjustment_params(cfg: PipelineConfig, census: Optional[Census]) -> AdjustmentParams:
    if cfg.adjustments_file is not None:
        if not cfg.adjustments_file.exists():
            raise ValidationError(f"adjustment parameter file not found: {cfg.adjustments_file}")
        return load_adjustment_params(cfg.adjustments_file.read_text(encoding="utf-8"),
                                      direction=cfg.multiworking_direction)

    def share(given, numerator):
        if given is not None:
            return given
        if census is None:
            raise ValidationError(f"no census to estimate the {numerator} share from")
        return estimate_share(census.records, numerator)

    if cfg.multihoming is not None:
        mh = cfg.multihoming
    elif cfg.multihoming_responses is not None:
        if not cfg.multihoming_responses.exists():
            raise ValidationError(f"multi-homing responses not found: {cfg.multihoming_responses}")
        lines = cfg.multihoming_responses.read_text(encoding="utf-8").split()
        try:
            mh = multihoming_param([int(t) for t in lines])
        except ValueError:
            raise ValidationError(f"{cfg.multihoming_responses}: expected one integer per line") from None
    else:
        raise ValidationError("[adjustments] needs multihoming or multihoming_responses")

    if cfg.multiworking_p is None or cfg.multiworking_n is None:
        raise ValidationError("[adjustments] needs multiworking_p and multiworking_n")
    mw = multiworking_param(cfg.multiworking_p, cfg.multiworking_n)

    return AdjustmentParams(
        ever_worked_share=share(cfg.ever_worked_share, "ever_worked_count"),
        fulltime_share=share(cfg.fulltime_share, "fulltime_count"),
        multihoming_mean=mh,
        multiworking_prop=mw,
        multiworking_direction=cfg.multiworking_direction,
    )


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _header(cfg: PipelineConfig) -> dict:
    out = {f"config.{k}": v for k, v in cfg.record().items()}
    out["meta.version"] = __version__
    if cfg.census_path.exists():
        out["meta.census_sha256"] = _sha256(cfg.census_path)
    if cfg.acquisition_mode != "off" and cfg.fixture_dir and cfg.fixture_dir.exists():
        out["meta.fixture_digest"] = FixtureStore(cfg.fixture_dir).digest()
    return out


def estimate(cfg: PipelineConfig) -> EstimateReport:
    extras: dict = {}
    if cfg.stub_observed is not None:
        census = load_census(cfg.census_path) if (
            cfg.adjustments_file is None and (cfg.ever_worked_share is None
                                              or cfg.fulltime_share is None)) else None
        observed_sum, predicted = cfg.stub_observed, cfg.stub_predicted
        extras["registered.source"] = "stub"
    else:
        census, names, X, observed, y = _training_data(cfg)
        model = gbt.GbtModel.loads(_require(cfg, MODEL).read_text(encoding="utf-8"))
        unobserved = ~observed
        preds = np.zeros(len(names))
        if unobserved.any():
            preds[unobserved] = gbt.predict(model, apply_transform(model.transform, X[unobserved]))
        rows = []
        for r, p in zip(census, preds):
            if r.registered_count is not None:
                rows.append([r.name, r.url, r.registered_count, "observed"])
            else:
                rows.append([r.name, r.url, repr(float(p)), "predicted"])
        _write(cfg.out_dir / PREDICTIONS,
               _csv(rows, ("name", "url", "registered_count", "status")))

        observed_sum = float(sum(r.registered_count for r in census.observed))
        if unobserved.any():
            interval = bootstrap_predict_sum(
                X[observed], y[observed], X[unobserved], model.hyperparams,
                cfg.bootstrap_replicates, cfg.bootstrap_level, cfg.bootstrap_seed,
                workers=cfg.bootstrap_workers,
            )
            point = float(preds[unobserved].sum())
            if not math.isclose(point, interval.point, rel_tol=1e-12):
                log.warning("bootstrap refit point %r differs from model point %r",
                            interval.point, point)
            predicted = BandedParam(point, interval.lower, interval.upper, "bootstrap-percentile")
            _write(cfg.out_dir / REPLICATES, write_replicate_sums(interval))
        else:
            predicted = BandedParam(0.0, 0.0, 0.0, "bootstrap-percentile")
        extras["registered.source"] = "model"
        extras["bootstrap.replicates"] = cfg.bootstrap_replicates
        extras["bootstrap.level"] = cfg.bootstrap_level
        extras["bootstrap.seed"] = cfg.bootstrap_seed
        extras["count.platforms"] = len(names)
        extras["count.observed"] = int(observed.sum())
        extras["count.predicted"] = int(unobserved.sum())
        for f in ("learning_rate", "max_depth", "num_rounds", "reg_lambda", "gamma",
                  "min_child_weight", "max_delta_step"):
            extras[f"model.{f}"] = getattr(model.hyperparams, f)
        meta_path = cfg.out_dir / "train_meta.json"
        if meta_path.exists():
            extras["model.validation_rmse"] = json.loads(meta_path.read_text())["validation_rmse"]

    params = adjustment_params(cfg, census)
    report = cascade(observed_sum, predicted, params,
                     pessimistic_upper=cfg.pessimistic_upper, digits=cfg.digits)

    top = cfg.rule_of_thumb_top_sum
    if top is None and census is not None and census.observed:
        top = _rule_of_thumb_sum(census, cfg.rule_of_thumb_platforms)
    if top:
        extras["rule_of_thumb.top_sum"] = top
        extras["rule_of_thumb.share"] = cfg.rule_of_thumb_share
        extras["rule_of_thumb.estimate"] = rule_of_thumb(top, cfg.rule_of_thumb_share)
    extras.update(_header(cfg))
    report.extras.update(extras)
    doc = report.to_flat()
    _write(cfg.out_dir / REPORT_JSON, json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return report


def _rule_of_thumb_sum(census: Census, names: tuple[str, ...]) -> float:
    if names:
        by_name = {r.name: r for r in census}
        missing = [n for n in names if n not in by_name or by_name[n].registered_count is None]
        if missing:
            raise ValidationError(f"rule-of-thumb platforms lack observed counts: {missing}")
        return float(sum(by_name[n].registered_count for n in names))
    counts = sorted((r.registered_count for r in census.observed), reverse=True)
    return float(sum(counts[:3]))


# ---------------------------------------------------------------------------
# report


def _num(x: float) -> str:
    return f"{x:,.0f}" if abs(x) >= 100 else f"{x:.4g}"


def _pct(x: float) -> str:
    return f"{100 * x:.1f}%"


def render_report(doc: dict) -> str:
    """Human table built only from the flat report document."""
    lines = []
    hdr = f"{'':46}{'Estimate':>16}  {'Error band':<30}{'Method'}"
    lines += ["Estimation results", hdr, "-" * len(hdr)]

    def row(label, value, band="", method=""):
        lines.append(f"{label:46}{value:>16}  {band:<30}{method}")

    row("(a) registered (observed)", _num(doc["registered.observed"]))
    p = "registered.predicted"
    row("(b) registered (predicted)", _num(doc[f"{p}.value"]),
        f"[{_num(doc[f'{p}.lower'])}, {_num(doc[f'{p}.upper'])}]", doc[f"{p}.method"])
    for tag, key, label in (("c", "ever_worked_share", "with at least one project completed"),
                            ("d", "fulltime_share", "with 10 projects or $1000 earned")):
        k = f"params.{key}"
        row(f"({tag}) {label}", _pct(doc[f"{k}.value"]),
            f"[{_pct(doc[f'{k}.lower'])}, {_pct(doc[f'{k}.upper'])}]", doc[f"{k}.method"])
    for tag, key, label in (("e", "multihoming_mean", "average of multi-homing platforms"),
                            ("f", "multiworking_prop", "proportion of workers sharing accounts")):
        k = f"params.{key}"
        row(f"({tag}) {label}", f"{doc[f'{k}.value']:.3g}",
            f"[{doc[f'{k}.lower']:.3g}, {doc[f'{k}.upper']:.3g}]", doc[f"{k}.method"])

    lines += ["", f"{'Cascade':46}{'raw':>16}  {'rounded':>16}", "-" * 80]

    def cline(label, raw_key, rounded_key):
        lines.append(f"{label:46}{_num(doc[raw_key]):>16}  {_num(doc[rounded_key]):>16}")

    cline("registered profiles", "registered.total", "rounded.registered_total")
    cline("ever worked", "ever_worked.value", "rounded.ever_worked")
    cline("full time", "fulltime.value", "rounded.fulltime")
    cline("ever worked, after multi-homing", "ever_worked.after_multihoming",
          "rounded.ever_worked_after_multihoming")
    cline("full time, after multi-homing", "fulltime.after_multihoming",
          "rounded.fulltime_after_multihoming")
    mw = doc["params.multiworking_direction"]
    cline(f"ever worked, after multi-working ({mw})", "ever_worked.after_multiworking",
          "rounded.ever_worked_after_multiworking")
    cline(f"full time, after multi-working ({mw})", "fulltime.after_multiworking",
          "rounded.fulltime_after_multiworking")
    mode = "pessimistic" if doc["upper.pessimistic"] else "point shares"
    cline(f"upper bound: registered ({mode})", "upper.registered", "rounded.upper_registered")
    cline("upper bound: ever worked", "upper.ever_worked", "rounded.upper_ever_worked")
    cline("upper bound: full time", "upper.fulltime", "rounded.upper_fulltime")
    if "rule_of_thumb.estimate" in doc:
        lines += ["", f"rule of thumb: top platforms {_num(doc['rule_of_thumb.top_sum'])} "
                      f"/ share {doc['rule_of_thumb.share']:g} = "
                      f"{_num(doc['rule_of_thumb.estimate'])}"]

    lines += ["", "Run header"]
    for k in sorted(doc):
        if k.startswith(("config.", "meta.", "bootstrap.", "model.", "count.")) or k == "registered.source":
            lines.append(f"  {k} = {doc[k]}")
    return "\n".join(lines) + "\n"


def report(cfg: PipelineConfig) -> str:
    doc = json.loads(_require(cfg, REPORT_JSON).read_text(encoding="utf-8"))
    text = render_report(doc)
    _write(cfg.out_dir / REPORT_TXT, text)
    return text


# ---------------------------------------------------------------------------
# figures


def histogram_bins(values, width: float = HIST_BIN_WIDTH) -> list[int]:
    """Bin index floor(log10(v) / width); values below 1 count as 1."""
    return [math.floor(math.log10(max(float(v), 1.0)) / width) for v in values]


def figure_tables(census: Census, predictions: list[tuple[str, float, str]]) -> dict[str, str]:
    out = {}
    observed = [v for _, v, s in predictions if s == "observed"]
    predicted = [v for _, v, s in predictions if s == "predicted"]
    bins_obs = histogram_bins(observed)
    bins_pred = histogram_bins(predicted)
    all_bins = bins_obs + bins_pred
    rows = []
    if all_bins:
        for k in range(min(all_bins), max(all_bins) + 1):
            rows.append([fmt(k * HIST_BIN_WIDTH), fmt((k + 1) * HIST_BIN_WIDTH),
                         bins_obs.count(k), bins_pred.count(k)])
    out[FIG1] = _csv(rows, ("bin_lower_log10", "bin_upper_log10", "observed", "predicted"))
    out[FIG2] = _csv([[n, fmt(v), s] for n, v, s in predictions],
                     ("name", "registered_count", "status"))

    for fname, numerator in ((FIG3, "ever_worked_count"), (FIG4, "fulltime_count")):
        ratios = share_ratios(census.records, numerator)
        rows = [["platform", n, fmt(q)] for n, q in ratios]
        if ratios:
            rows.append(["mean", "", fmt(estimate_share(census.records, numerator).value)])
        out[fname] = _csv(rows, ("record", "name", "ratio"))
    return out


def read_predictions(text: str) -> list[tuple[str, float, str]]:
    reader = csv.DictReader(io.StringIO(text))
    rows = []
    for r in reader:
        v = r["registered_count"]
        rows.append((r["name"], int(v) if r["status"] == "observed" else float(v), r["status"]))
    return rows


def figures(cfg: PipelineConfig) -> dict[str, str]:
    census = load_census(_require(cfg, CENSUS_ENRICHED))
    preds = read_predictions(_require(cfg, PREDICTIONS).read_text(encoding="utf-8"))
    tables = figure_tables(census, preds)
    for name, text in tables.items():
        _write(cfg.out_dir / name, text)
    return tables


def run_all(cfg: PipelineConfig) -> None:
    ingest(cfg)
    enrich(cfg)
    if cfg.stub_observed is None:
        train(cfg)
    estimate(cfg)
    report(cfg)
    if cfg.stub_observed is None:
        figures(cfg)
