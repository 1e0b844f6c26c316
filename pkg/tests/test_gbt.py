import json
import warnings

import numpy as np
import pytest

from gigcount import gbt
from gigcount.errors import ValidationError
from gigcount.gbt import Hyperparams

from oracles import brute_split, central_difference


def poisson_world(seed, n=200):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = rng.poisson(np.exp(X[:, 0] + 0.5 * X[:, 1])).astype(float)
    return X, y


@pytest.mark.parametrize("f, y, expected", [
    (0.0, 1.0, (0.0, 1.0)),
    (np.log(2.0), 2.0, (0.0, 2.0)),
    (0.0, 3.0, (-2.0, 1.0)),
])
def test_grad_hess_examples(f, y, expected):
    g, h = gbt.poisson_grad_hess(np.array([f]), np.array([y]))
    assert g[0] == pytest.approx(expected[0], abs=1e-15)
    assert h[0] == pytest.approx(expected[1], rel=1e-15)


def test_grad_hess_finite_differences():
    rng = np.random.default_rng(0)
    f = rng.uniform(-3, 3, 100)
    y = rng.poisson(5, 100).astype(float)
    g, h = gbt.poisson_grad_hess(f, y)
    for fi, yi, gi, hi in zip(f, y, g, h):
        d1, _ = central_difference(lambda t: np.exp(t) - yi * t, fi)
        assert abs(gi - d1) <= 1e-6 * max(abs(d1), 1.0)
        # hessian: central difference of the analytic gradient
        dg, _ = central_difference(lambda t: np.exp(t) - yi, fi)
        assert abs(hi - dg) <= 1e-6 * abs(dg)


def test_no_split_for_identical_rows():
    X = np.ones((5, 3))
    g = np.array([-1.0, 2, 3, -4, 1])
    assert gbt.best_split(X, g, np.ones(5), Hyperparams(reg_lambda=0)) is None


def test_two_row_split():
    hp = Hyperparams(reg_lambda=0.0, gamma=0.0, min_child_weight=0.0)
    s = gbt.best_split(np.array([[1.0], [3.0]]), np.array([-1.0, 1.0]), np.ones(2), hp)
    assert (s.feature, s.threshold, s.gain) == (0, 2.0, 1.0)
    assert (s.left_grad, s.right_grad) == (-1.0, 1.0)


@pytest.mark.parametrize("lam", [0.0, 1.0])
@pytest.mark.parametrize("mcw", [0.0, 1.0])
def test_split_matches_brute_force(lam, mcw):
    rng = np.random.default_rng(int(lam * 10 + mcw))
    hp = Hyperparams(reg_lambda=lam, min_child_weight=mcw)
    for _ in range(25):
        n = int(rng.integers(2, 51))
        X = np.column_stack([rng.normal(size=n), rng.integers(0, 6, n), rng.exponential(size=n)])
        f = rng.normal(size=n)
        g, h = gbt.poisson_grad_hess(f, rng.poisson(2, n).astype(float))
        got = gbt.best_split(X, g, h, hp)
        want = brute_split(X, g, h, lam, 0.0, mcw)
        if want is None:
            assert got is None
            continue
        assert (got.feature, got.threshold) == want[:2]
        assert got.gain == pytest.approx(want[2], rel=1e-9, abs=1e-9)


def test_constant_target_fixed_point():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(60, 3))
    y = np.full(60, 7.0)
    model = gbt.fit(X, y, Hyperparams(num_rounds=200))
    np.testing.assert_allclose(gbt.predict(model, X), 7.0, rtol=0.01)


def test_fit_is_bitwise_deterministic():
    X, y = poisson_world(2)
    hp = Hyperparams(max_depth=4, num_rounds=50)
    a, b = gbt.fit(X, y, hp, seed=5), gbt.fit(X, y, hp, seed=5)
    assert a.dumps() == b.dumps()
    assert gbt.predict(a, X).tobytes() == gbt.predict(b, X).tobytes()


@pytest.mark.parametrize("hp", [Hyperparams(), Hyperparams(learning_rate=1.0, max_depth=4,
                                                          reg_lambda=0.0, min_child_weight=0.0)])
def test_training_deviance_non_increasing(hp):
    X, y = poisson_world(3)
    y[:20] *= 50  # heavy tail stresses the Newton steps
    model = gbt.fit(X, y, hp)
    dev = np.array(model.train_deviance)
    assert len(dev) == hp.num_rounds + 1
    assert np.all(np.diff(dev) <= 1e-9 * np.abs(dev[:-1]))


def test_predictions_strictly_positive():
    X, y = poisson_world(4)
    y[y > 0] = 0
    y[0] = 1
    model = gbt.fit(X, y, Hyperparams(num_rounds=200, learning_rate=0.3))
    assert np.all(gbt.predict(model, np.random.default_rng(0).normal(size=(500, 2)) * 10) > 0)


def test_all_zero_target_warns():
    with pytest.warns(RuntimeWarning, match="all training targets are zero"):
        model = gbt.fit(np.arange(6.0).reshape(3, 2), np.zeros(3), Hyperparams(num_rounds=3))
    assert np.all(gbt.predict(model, np.zeros((1, 2))) > 0)


def test_zero_tree_model_predicts_base():
    y = np.array([1.0, 2.0, 6.0])
    m = gbt.GbtModel(np.log(y.mean() + gbt.BASE_SCORE_EPS), (), Hyperparams(), 2)
    np.testing.assert_allclose(gbt.predict(m, np.zeros((4, 2))), y.mean() + 1e-8, rtol=1e-12)


def test_feature_count_mismatch():
    X, y = poisson_world(5, n=30)
    model = gbt.fit(X, y, Hyperparams(num_rounds=2))
    with pytest.raises(ValidationError, match="feature-count mismatch"):
        gbt.predict(model, np.zeros((1, 3)))


def test_permutation_invariance():
    X, y = poisson_world(6, n=120)
    hp = Hyperparams(max_depth=3, num_rounds=40)
    perm = np.random.default_rng(1).permutation(120)
    a = gbt.fit(X, y, hp)
    b = gbt.fit(X[perm], y[perm], hp)
    np.testing.assert_allclose(gbt.predict(a, X), gbt.predict(b, X), rtol=1e-9)


def test_model_json_round_trip():
    X, y = poisson_world(7, n=50)
    model = gbt.fit(X, y, Hyperparams(num_rounds=5))
    back = gbt.GbtModel.loads(model.dumps())
    assert back == model
    assert json.loads(model.dumps())["format"] == "gigcount.gbt/1"
    assert gbt.predict(back, X).tobytes() == gbt.predict(model, X).tobytes()


def test_hyperparams_validated():
    with pytest.raises(ValidationError, match="learning_rate"):
        Hyperparams(learning_rate=0)
    with pytest.raises(ValidationError, match="max_depth"):
        Hyperparams(max_depth=0)
    assert len(gbt.default_grid()) == 81


def test_split_sizes():
    tr, va = gbt.split_train_validation(159, 0.8, seed=0)
    assert (len(tr), len(va)) == (127, 32)
    assert not set(tr) & set(va) and set(tr) | set(va) == set(range(159))
    tr, va = gbt.split_train_validation(2, 0.5, seed=0)
    assert (len(tr), len(va)) == (1, 1)


def test_split_seeding():
    a = gbt.split_train_validation(100, 0.8, seed=1)
    b = gbt.split_train_validation(100, 0.8, seed=1)
    c = gbt.split_train_validation(100, 0.8, seed=2)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], c[0])


def test_degenerate_split_rejected():
    with pytest.raises(ValidationError):
        gbt.split_train_validation(1, 0.8, seed=0)


@pytest.mark.parametrize("pred, actual, expected", [
    ([1.0, 2.0], [1.0, 2.0], 0.0),
    ([0.0], [2.0], 2.0),
    ([1.0, 2.0], [3.0, 6.0], np.sqrt(10.0)),
])
def test_rmse(pred, actual, expected):
    assert gbt.rmse(pred, actual) == pytest.approx(expected, rel=1e-15)


def test_grid_of_one():
    X, y = poisson_world(8, n=80)
    hp = Hyperparams(num_rounds=20)
    assert gbt.grid_search(X, y, [hp], seed=0).best == hp


def test_crippled_point_loses():
    X, y = poisson_world(9)
    crippled = Hyperparams(num_rounds=1, max_depth=1)
    good = Hyperparams(num_rounds=100, max_depth=3, learning_rate=0.1)
    res = gbt.grid_search(X, y, [crippled, good], seed=0)
    assert res.best == good
    assert res.all_trials[0][1] > res.all_trials[1][1]


def test_grid_from_lists():
    grid = gbt.grid_from_lists(learning_rate=[0.1, 0.3], max_depth=[2])
    assert [(h.learning_rate, h.max_depth) for h in grid] == [(0.1, 2), (0.3, 2)]


def test_learner_beats_mean_baseline():
    X, y = poisson_world(1)
    grid = gbt.grid_from_lists(learning_rate=[0.1, 0.3], max_depth=[2, 3], num_rounds=[50, 100])
    res = gbt.grid_search(X, y, grid, seed=1)
    train, valid = np.array(res.train_index), np.array(res.validation_index)
    baseline = gbt.rmse(np.full(len(valid), y[train].mean()), y[valid])
    assert res.validation_rmse <= 0.8 * baseline
