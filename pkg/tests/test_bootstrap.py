import numpy as np
import pytest

from gigcount.bootstrap import (
    bootstrap_predict_sum,
    fit_predict_sum,
    percentile,
    write_replicate_sums,
)
from gigcount.errors import ValidationError
from gigcount.gbt import Hyperparams

from worlds import COVERAGE_HP, discrete_poisson_world

HP = Hyperparams(learning_rate=0.3, max_depth=2, num_rounds=20)


def small_world(seed=0, n=40):
    rng = np.random.default_rng(seed)
    X = rng.lognormal(3, 1, size=(n + 10, 3))
    y = rng.poisson(np.exp(0.3 * np.log(X[:n, 0]) + 1)).astype(float)
    return X[:n], y, X[n:]


def test_percentile_examples():
    assert percentile([5], 0.3) == 5
    assert percentile(range(1, 101), 0.975) == 98
    assert percentile(range(1, 101), 0.025) == 3
    xs = [4.0, -1.0, 9.0, 2.5]
    assert percentile(xs, 0) == min(xs) and percentile(xs, 1) == max(xs)
    with pytest.raises(ValidationError):
        percentile([], 0.5)


def test_single_replicate_interval():
    X, y, Xn = small_world()
    iv = bootstrap_predict_sum(X, y, Xn, HP, B=1, seed=3)
    assert iv.lower == iv.upper == iv.replicate_sums[0]
    assert iv.point == fit_predict_sum(X, y, Xn, HP)


def test_order_and_workers_do_not_matter():
    X, y, Xn = small_world(1)
    base = bootstrap_predict_sum(X, y, Xn, HP, B=30, seed=9)
    order = np.random.default_rng(0).permutation(np.arange(1, 31))
    shuffled = bootstrap_predict_sum(X, y, Xn, HP, B=30, seed=9, order=order)
    threaded = bootstrap_predict_sum(X, y, Xn, HP, B=30, seed=9, workers=4, order=order)
    assert base == shuffled == threaded


def test_seed_changes_replicates():
    X, y, Xn = small_world(1)
    a = bootstrap_predict_sum(X, y, Xn, HP, B=10, seed=1)
    b = bootstrap_predict_sum(X, y, Xn, HP, B=10, seed=2)
    assert a.replicate_sums != b.replicate_sums


def test_replicate_sums_positive():
    X, y, Xn = small_world(2)
    iv = bootstrap_predict_sum(X, y, Xn, HP, B=50, seed=0)
    assert all(s > 0 for s in iv.replicate_sums)
    assert iv.lower <= iv.upper


def test_redraws_degenerate_resamples():
    # one positive target among many zeros: most resamples need a redraw or two
    X, _, Xn = small_world(3, n=8)
    y = np.zeros(8)
    y[0] = 4.0
    iv = bootstrap_predict_sum(X, y, Xn, HP, B=20, seed=0)
    assert len(iv.replicate_sums) == 20


def test_order_must_be_permutation():
    X, y, Xn = small_world()
    with pytest.raises(ValidationError, match="permutation"):
        bootstrap_predict_sum(X, y, Xn, HP, B=3, order=[1, 1, 2])


def test_write_replicate_sums():
    X, y, Xn = small_world()
    iv = bootstrap_predict_sum(X, y, Xn, HP, B=3, seed=0)
    lines = write_replicate_sums(iv).splitlines()
    assert lines[0] == "replicate_sum"
    assert [float(v) for v in lines[1:]] == list(iv.replicate_sums)


@pytest.mark.slow
def test_interval_stable_in_b():
    """Stability smoke check at the stated IQR/10 tolerance.

    Known to fail: the Monte Carlo error of a 2.5%/97.5% quantile from 200
    replicates is about 0.19 sd, while IQR/10 is about 0.135 sd, so no
    percentile estimator meets this bound reliably (5% pass rate over 20
    seeds in this world).
    """
    X, y, Xn, _ = discrete_poisson_world(0)
    small = bootstrap_predict_sum(X, y, Xn, COVERAGE_HP, B=200, seed=5)
    large = bootstrap_predict_sum(X, y, Xn, COVERAGE_HP, B=2000, seed=5)
    q1, q3 = np.percentile(large.replicate_sums, [25, 75])
    tol = (q3 - q1) / 10
    lower_shift = abs(small.lower - large.lower)
    upper_shift = abs(small.upper - large.upper)
    assert lower_shift < tol, f"lower moved {lower_shift:.3f}, tolerance {tol:.3f}"
    assert upper_shift < tol, f"upper moved {upper_shift:.3f}, tolerance {tol:.3f}"
