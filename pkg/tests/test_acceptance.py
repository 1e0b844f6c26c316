"""Acceptance criteria 1-10, each at its stated tolerance and time budget.

Run with ``pytest tests/test_acceptance.py -s`` to see one PASS/FAIL line
per criterion.
"""

import filecmp
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from gigcount import gbt, pipeline
from gigcount.adjustments import (
    BandedParam,
    cascade,
    estimate_share,
    multihoming_param,
    multiworking_param,
    headline_preset,
    rule_of_thumb,
)
from gigcount.bootstrap import bootstrap_predict_sum
from gigcount.census import PlatformRecord
from gigcount.config import load_config
from gigcount.features import TrendsSeries, fit_transform, normalize_trends_batch

from conftest import FIXTURES
from oracles import brute_split, central_difference
from worlds import COVERAGE_HP, discrete_poisson_world


@contextmanager
def criterion(number, title, budget=None):
    """Time the block and print one PASS/FAIL line; failures still raise."""
    notes = []
    start = time.perf_counter()
    ok = False
    try:
        yield notes
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        within = budget is None or elapsed < budget
        status = "PASS" if ok and within else "FAIL"
        limit = f" (limit {budget:g}s)" if budget is not None else ""
        detail = "; ".join(notes)
        print(f"\n[{status}] criterion {number}: {title} | {detail} | {elapsed:.2f}s{limit}")
    assert within, f"criterion {number} took {elapsed:.2f}s, budget {budget}s"


def test_criterion_01_cascade_reproduction():
    headline = {
        "registered_total": 163e6, "ever_worked": 19e6, "fulltime": 5e6,
        "ever_worked_after_multihoming": 10e6, "fulltime_after_multihoming": 2.7e6,
        "ever_worked_after_multiworking": 8.5e6, "fulltime_after_multiworking": 2.3e6,
        "upper_registered": 205e6, "upper_ever_worked": 24e6, "upper_fulltime": 6e6,
    }
    with criterion(1, "cascade reproduction within 10%", budget=1.0) as notes:
        report = cascade(140e6, BandedParam(23e6, 12e6, 65e6, "bootstrap-percentile"),
                         headline_preset())
        rounded = report.rounded()
        worst = max(abs(rounded[k] - v) / v for k, v in headline.items())
        notes.append(", ".join(f"{k}={rounded[k]:.3g}" for k in headline))
        notes.append(f"worst relative gap {worst:.3f} (tol 0.10)")
        assert worst <= 0.10


def test_criterion_02_rule_of_thumb():
    with criterion(2, "rule of thumb exact", budget=0.1) as notes:
        value = rule_of_thumb(65e6, 0.5)
        notes.append(f"rule_of_thumb(65e6, 0.5) = {value:,.0f} (expected 130,000,000 exactly)")
        assert value == 130_000_000


def test_criterion_03_gradient_finite_differences():
    with criterion(3, "gradient vs central finite differences") as notes:
        rng = np.random.default_rng(3)
        f = rng.uniform(-4, 4, 100)
        y = rng.poisson(np.exp(rng.uniform(-1, 4, 100))).astype(float)
        g, _ = gbt.poisson_grad_hess(f, y)
        worst = 0.0
        for fi, yi, gi in zip(f, y, g):
            d1, _ = central_difference(lambda t: math.exp(t) - yi * t, fi)
            worst = max(worst, abs(gi - d1) / max(abs(d1), 1.0))
        notes.append(f"100 points, max relative error {worst:.2e} (tol 1e-6, denominator max(|fd|, 1))")
        assert worst < 1e-6


def test_criterion_04_split_oracle():
    with criterion(4, "best_split equals exhaustive enumeration", budget=10.0) as notes:
        rng = np.random.default_rng(4)
        worst = 0.0
        for i in range(50):
            lam = float(i % 2)
            hp = gbt.Hyperparams(reg_lambda=lam, min_child_weight=0.0)
            n = int(rng.integers(2, 51))
            X = np.column_stack([rng.normal(size=n), rng.integers(0, 8, n),
                                 rng.lognormal(size=n)])
            g, h = gbt.poisson_grad_hess(rng.normal(size=n), rng.poisson(3, n).astype(float))
            got = gbt.best_split(X, g, h, hp)
            want = brute_split(X, g, h, lam)
            if want is None:
                assert got is None
                continue
            assert (got.feature, got.threshold) == want[:2]
            worst = max(worst, abs(got.gain - want[2]))
            assert abs(got.gain - want[2]) <= 1e-9 * max(1.0, abs(want[2]))
        notes.append(f"50 datasets, lambda in {{0,1}}, max gain gap {worst:.1e} (tol 1e-9)")


def test_criterion_05_learner_sanity():
    with criterion(5, "learner beats mean baseline by >= 20%", budget=30.0) as notes:
        rng = np.random.default_rng(5)
        X = rng.normal(size=(200, 2))
        y = rng.poisson(np.exp(X[:, 0] + 0.5 * X[:, 1])).astype(float)
        res = gbt.grid_search(X, y, gbt.default_grid(), seed=5)
        train, valid = np.array(res.train_index), np.array(res.validation_index)
        baseline = gbt.rmse(np.full(len(valid), y[train].mean()), y[valid])
        model = gbt.fit(X[train], y[train], res.best)
        dev = np.diff(model.train_deviance)
        preds = gbt.predict(model, rng.normal(size=(1000, 2)) * 3)
        notes.append(f"validation RMSE {res.validation_rmse:.3f} vs baseline {baseline:.3f} "
                     f"({1 - res.validation_rmse / baseline:.1%} lower, need >= 20%)")
        notes.append(f"max deviance step {dev.max():.2e}, min prediction {preds.min():.2e}")
        assert res.validation_rmse <= 0.8 * baseline
        assert np.all(dev <= 0)
        assert np.all(preds > 0)


@pytest.mark.slow
def test_criterion_06_bootstrap_coverage():
    with criterion(6, "95% interval coverage >= 85%", budget=300.0) as notes:
        trials, covered = 200, 0
        for k in range(trials):
            X, y, Xn, truth = discrete_poisson_world(k)
            iv = bootstrap_predict_sum(X, y, Xn, COVERAGE_HP, B=200, seed=k)
            covered += iv.lower <= truth <= iv.upper
        notes.append(f"{covered}/{trials} intervals cover the true unobserved sum "
                     f"({covered / trials:.3f}, need >= 0.85)")
        assert covered / trials >= 0.85


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_07_determinism(sample_dir, tmp_path, monkeypatch):
    with criterion(7, "byte-identical output trees", budget=None) as notes:
        base = load_config(sample_dir / "sample.ini").with_overrides(out_dir=tmp_path / "a")
        pipeline.run_all(base)
        pipeline.run_all(base.with_overrides(out_dir=tmp_path / "b"))

        real = pipeline.bootstrap_predict_sum
        rng = np.random.default_rng(7)

        def shuffled(*args, **kwargs):
            B = args[4]
            kwargs.update(order=rng.permutation(np.arange(1, B + 1)), workers=4)
            return real(*args, **kwargs)

        monkeypatch.setattr(pipeline, "bootstrap_predict_sum", shuffled)
        pipeline.run_all(base.with_overrides(out_dir=tmp_path / "c"))

        a, b, c = (_tree_bytes(tmp_path / d) for d in "abc")
        notes.append(f"{len(a)} files; rerun identical: {a == b}; "
                     f"shuffled replicate order with 4 threads identical: {a == c}")
        assert a == b == c


def test_criterion_08_transform_and_normalization():
    with criterion(8, "transform moments and batch invariance") as notes:
        rng = np.random.default_rng(8)
        X = np.column_stack([rng.integers(1, 10**6, 150), rng.lognormal(8, 3, 150),
                             rng.exponential(50, 150), rng.uniform(0, 1, 150)])
        _, Z = fit_transform(X)
        mean_err = np.abs(Z.mean(axis=0)).max()
        sd_err = np.abs(Z.std(axis=0) - 1).max()
        notes.append(f"max |mean| {mean_err:.1e}, max |sd-1| {sd_err:.1e} (tol 1e-9)")
        assert mean_err < 1e-9 and sd_err < 1e-9

        dates = tuple(np.datetime64("2020-01-01") + np.arange(60))
        dates = tuple(d.astype(object) for d in dates)

        def s(site, values):
            return TrendsSeries(site, dates, tuple(float(v) for v in values))

        anchor = s("anchor", rng.integers(0, 101, 60))
        sites = {f"t{i}": s(f"t{i}", rng.integers(0, 101, 60)) for i in range(4)}
        others = [s(f"o{i}", rng.integers(0, 101, 60)) for i in range(3)]
        mismatches = 0
        for name, target in sites.items():
            one = normalize_trends_batch([anchor, target] + others, "anchor")
            two = normalize_trends_batch(
                [v for k, v in sites.items() if k != name][:2] + [target, anchor], "anchor")
            a = next(x for x in one if x.site == name)
            b = next(x for x in two if x.site == name)
            mismatches += a != b
        notes.append(f"dual-batch mismatches {mismatches} of {len(sites)} (need 0, exact)")
        assert mismatches == 0


def test_criterion_09_adjustment_estimators():
    with criterion(9, "share, multi-homing and multi-working examples") as notes:
        recs = [PlatformRecord(n, f"{n}.test", registered_count=10, ever_worked_count=c)
                for n, c in (("a", 1), ("b", 2), ("c", 6))]
        share = estimate_share(recs)
        single = estimate_share([PlatformRecord("a", "a.test", registered_count=5,
                                                ever_worked_count=1)])
        mh = multihoming_param([1, 1, 1, 2, 2, 3, 4])
        mh1 = multihoming_param([1, 1, 1])
        mw0 = multiworking_param(0.0, 40)
        mw5 = multiworking_param(0.5, 100)
        mw = multiworking_param(0.21, 708)
        checks = {
            "share (0.3, [0.1, 0.6])": (share.value, share.lower, share.upper) == (0.3, 0.1, 0.6),
            "share singleton 0.2": (single.value, single.lower, single.upper) == (0.2, 0.2, 0.2),
            "multihoming (2.0, [1, 4])": (mh.value, mh.lower, mh.upper) == (2.0, 1, 4),
            "multihoming all ones": (mh1.value, mh1.lower, mh1.upper) == (1.0, 1, 1),
            "multiworking p=0": (mw0.value, mw0.lower, mw0.upper) == (0.0, 0.0, 0.0),
            "multiworking (0.5, [0.402, 0.598])": (round(mw5.lower, 12), round(mw5.upper, 12))
            == (0.402, 0.598),
            "multiworking(0.21, 708) within 0.005": abs(mw.lower - 0.18) <= 0.005
            and abs(mw.upper - 0.24) <= 0.005,
        }
        notes.append(", ".join(f"{k}: {'ok' if v else 'MISMATCH'}" for k, v in checks.items()))
        notes.append(f"multiworking(0.21, 708) = [{mw.lower:.6f}, {mw.upper:.6f}]")
        assert all(checks.values())


ORACLE_FILES = ("summary.csv", "summary_enriched.csv", "fig1_registered_hist.csv",
                "fig2_registered_platforms.csv", "fig3_ever_worked_ratios.csv",
                "fig4_fulltime_ratios.csv")


def test_criterion_10_end_to_end(sample_dir, tmp_path):
    with criterion(10, "desk run on the sample census", budget=60.0) as notes:
        cfg = load_config(sample_dir / "sample.ini").with_overrides(out_dir=tmp_path / "run")
        assert cfg.bootstrap_replicates == 1000
        pipeline.run_all(cfg)
        same = [f for f in ORACLE_FILES
                if filecmp.cmp(cfg.out_dir / f, FIXTURES / "oracle" / f, shallow=False)]
        notes.append(f"B={cfg.bootstrap_replicates}; {len(same)}/{len(ORACLE_FILES)} "
                     f"summary/figure files byte-equal to oracle fixtures")
        assert len(same) == len(ORACLE_FILES), sorted(set(ORACLE_FILES) - set(same))
