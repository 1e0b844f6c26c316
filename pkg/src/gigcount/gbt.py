"""Gradient-boosted regression trees with a Poisson (log-link) objective.

Second-order boosting: every round fits one tree to the gradient and hessian
of the Poisson negative log-likelihood ``exp(f) - y*f`` at the current
log-scale predictions, using exact greedy split search. Leaf weights are
``-G / (H + reg_lambda)`` clipped to ``+-max_delta_step``; the clip keeps each
leaf's Newton step short enough that the training loss cannot go up.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from numba import njit

from .errors import InvariantError, ValidationError
from .features import TransformParams

BASE_SCORE_EPS = 1e-8
# a candidate must beat the incumbent by this relative margin; gains of
# candidates inducing the same partition differ only by rounding
SPLIT_TIE_RTOL = 1e-10


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 0.1
    max_depth: int = 3
    num_rounds: int = 100
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    max_delta_step: float = 0.7

    def __post_init__(self):
        problems = []
        if not 0 < self.learning_rate <= 1:
            problems.append("learning_rate must be in (0, 1]")
        if int(self.max_depth) != self.max_depth or self.max_depth < 1:
            problems.append("max_depth must be a positive integer")
        if int(self.num_rounds) != self.num_rounds or self.num_rounds < 1:
            problems.append("num_rounds must be a positive integer")
        if self.reg_lambda < 0:
            problems.append("reg_lambda must be >= 0")
        if self.gamma < 0:
            problems.append("gamma must be >= 0")
        if self.min_child_weight < 0:
            problems.append("min_child_weight must be >= 0")
        if self.max_delta_step < 0:
            problems.append("max_delta_step must be >= 0 (0 disables the clip)")
        if problems:
            raise ValidationError("invalid hyperparameters: " + "; ".join(problems))


def default_grid() -> list[Hyperparams]:
    return [
        Hyperparams(learning_rate=lr, max_depth=d, num_rounds=r, reg_lambda=lam)
        for lr, d, r, lam in itertools.product(
            (0.05, 0.1, 0.3), (2, 3, 4), (50, 100, 200), (0.0, 1.0, 10.0)
        )
    ]


def poisson_grad_hess(pred_log, y):
    """Gradient and hessian of ``exp(f) - y*f`` with respect to f."""
    mu = np.exp(pred_log)
    return mu - y, mu


# ---------------------------------------------------------------------------
# numba kernels


@njit(cache=True, nogil=True)
def _split_search(X, rows, g, h, lam, gamma, min_child_weight):
    n = rows.shape[0]
    G = 0.0
    H = 0.0
    for i in range(n):
        G += g[rows[i]]
        H += h[rows[i]]
    parent = G * G / (H + lam)

    best_feature = -1
    best_threshold = 0.0
    best_gain = 0.0
    best = np.zeros(4)
    vals = np.empty(n)
    for f in range(X.shape[1]):
        for i in range(n):
            vals[i] = X[rows[i], f]
        order = np.argsort(vals, kind="mergesort")
        gl = 0.0
        hl = 0.0
        for k in range(n - 1):
            r = rows[order[k]]
            gl += g[r]
            hl += h[r]
            v0 = vals[order[k]]
            v1 = vals[order[k + 1]]
            if v1 <= v0:
                continue
            gr = G - gl
            hr = H - hl
            if hl < min_child_weight or hr < min_child_weight:
                continue
            gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent) - gamma
            if gain > best_gain * (1.0 + SPLIT_TIE_RTOL):
                best_gain = gain
                best_feature = f
                t = 0.5 * (v0 + v1)
                if t <= v0:
                    t = v1
                best_threshold = t
                best[0] = gl
                best[1] = hl
                best[2] = gr
                best[3] = hr
    return best_feature, best_threshold, best_gain, best


@njit(cache=True, nogil=True)
def _grow_tree(X, g, h, max_depth, lam, gamma, min_child_weight, max_delta_step,
               feat, thr, left, right, value):
    n = X.shape[0]
    cap = feat.shape[0]
    idx = np.arange(n)
    starts = np.zeros(cap, dtype=np.int64)
    ends = np.zeros(cap, dtype=np.int64)
    depths = np.zeros(cap, dtype=np.int64)
    ends[0] = n
    n_nodes = 1
    node = 0
    while node < n_nodes:
        s = starts[node]
        e = ends[node]
        rows = idx[s:e].copy()
        split = False
        if depths[node] < max_depth and e - s >= 2:
            f, t, gain, sums = _split_search(X, rows, g, h, lam, gamma, min_child_weight)
            if f >= 0:
                split = True
                # stable partition of rows into left (x < t) then right
                k = s
                for i in range(rows.shape[0]):
                    if X[rows[i], f] < t:
                        idx[k] = rows[i]
                        k += 1
                mid = k
                for i in range(rows.shape[0]):
                    if not X[rows[i], f] < t:
                        idx[k] = rows[i]
                        k += 1
                feat[node] = f
                thr[node] = t
                left[node] = n_nodes
                right[node] = n_nodes + 1
                starts[n_nodes] = s
                ends[n_nodes] = mid
                depths[n_nodes] = depths[node] + 1
                starts[n_nodes + 1] = mid
                ends[n_nodes + 1] = e
                depths[n_nodes + 1] = depths[node] + 1
                n_nodes += 2
        if not split:
            G = 0.0
            H = 0.0
            for i in range(rows.shape[0]):
                G += g[rows[i]]
                H += h[rows[i]]
            w = -G / (H + lam)
            if max_delta_step > 0.0:
                if w > max_delta_step:
                    w = max_delta_step
                elif w < -max_delta_step:
                    w = -max_delta_step
            feat[node] = -1
            thr[node] = 0.0
            left[node] = -1
            right[node] = -1
            value[node] = w
        node += 1
    return n_nodes


@njit(cache=True, nogil=True)
def _tree_value(x, feat, thr, left, right, value):
    node = 0
    while feat[node] >= 0:
        if x[feat[node]] < thr[node]:
            node = left[node]
        else:
            node = right[node]
    return value[node]


@njit(cache=True, nogil=True)
def _boost(X, y, base_score, lr, max_depth, num_rounds, lam, gamma, min_child_weight,
           max_delta_step):
    n = X.shape[0]
    cap = 2 ** (max_depth + 1) - 1
    feat = np.full((num_rounds, cap), -1, dtype=np.int64)
    thr = np.zeros((num_rounds, cap))
    left = np.full((num_rounds, cap), -1, dtype=np.int64)
    right = np.full((num_rounds, cap), -1, dtype=np.int64)
    value = np.zeros((num_rounds, cap))
    n_nodes = np.zeros(num_rounds, dtype=np.int64)
    deviance = np.zeros(num_rounds + 1)

    f = np.full(n, base_score)
    g = np.empty(n)
    h = np.empty(n)
    d = 0.0
    for i in range(n):
        d += math.exp(f[i]) - y[i] * f[i]
    deviance[0] = d
    for t in range(num_rounds):
        for i in range(n):
            mu = math.exp(f[i])
            g[i] = mu - y[i]
            h[i] = mu
        n_nodes[t] = _grow_tree(X, g, h, max_depth, lam, gamma, min_child_weight,
                                max_delta_step, feat[t], thr[t], left[t], right[t], value[t])
        d = 0.0
        for i in range(n):
            f[i] += lr * _tree_value(X[i], feat[t], thr[t], left[t], right[t], value[t])
            d += math.exp(f[i]) - y[i] * f[i]
        deviance[t + 1] = d
    return feat, thr, left, right, value, n_nodes, deviance


@njit(cache=True, nogil=True)
def _predict_log(X, base_score, lr, feat, thr, left, right, value):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        s = base_score
        for t in range(feat.shape[0]):
            s += lr * _tree_value(X[i], feat[t], thr[t], left[t], right[t], value[t])
        out[i] = s
    return out


# ---------------------------------------------------------------------------
# public API


@dataclass(frozen=True)
class SplitDecision:
    feature: int
    threshold: float
    gain: float
    left_grad: float
    left_hess: float
    right_grad: float
    right_hess: float


def best_split(X, g, h, hp: Hyperparams, rows=None) -> Optional[SplitDecision]:
    """Best (feature, threshold) for one node, or None when no split has positive gain.

    Thresholds are midpoints between consecutive distinct values; rows with
    ``x < threshold`` go left. Ties (gains within SPLIT_TIE_RTOL relative)
    keep the first candidate in (feature, ascending threshold) order.
    """
    X = np.ascontiguousarray(X, dtype=float)
    g = np.ascontiguousarray(g, dtype=float)
    h = np.ascontiguousarray(h, dtype=float)
    rows = np.arange(X.shape[0]) if rows is None else np.asarray(rows, dtype=np.int64)
    if rows.shape[0] < 2:
        return None
    f, t, gain, sums = _split_search(
        X, rows, g, h, float(hp.reg_lambda), float(hp.gamma), float(hp.min_child_weight)
    )
    if f < 0:
        return None
    return SplitDecision(int(f), float(t), float(gain), *map(float, sums))


@dataclass(frozen=True)
class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf whose weight is ``value``."""

    feature: tuple[int, ...]
    threshold: tuple[float, ...]
    left: tuple[int, ...]
    right: tuple[int, ...]
    value: tuple[float, ...]

    def depth(self) -> int:
        def walk(node):
            if self.feature[node] < 0:
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))

        return walk(0)

    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f < 0)


@dataclass(frozen=True)
class GbtModel:
    base_score: float
    trees: tuple[Tree, ...]
    hyperparams: Hyperparams
    n_features: int
    transform: Optional[TransformParams] = None
    train_deviance: tuple[float, ...] = field(default=(), compare=False)

    def with_transform(self, transform: TransformParams) -> "GbtModel":
        return GbtModel(self.base_score, self.trees, self.hyperparams, self.n_features,
                        transform, self.train_deviance)

    def _stacked(self):
        width = max((len(t.feature) for t in self.trees), default=1)
        k = len(self.trees)
        feat = np.full((k, width), -1, dtype=np.int64)
        thr = np.zeros((k, width))
        left = np.full((k, width), -1, dtype=np.int64)
        right = np.full((k, width), -1, dtype=np.int64)
        value = np.zeros((k, width))
        for i, t in enumerate(self.trees):
            m = len(t.feature)
            feat[i, :m] = t.feature
            thr[i, :m] = t.threshold
            left[i, :m] = t.left
            right[i, :m] = t.right
            value[i, :m] = t.value
        return feat, thr, left, right, value

    def to_dict(self) -> dict:
        return {
            "format": "gigcount.gbt/1",
            "objective": "poisson",
            "base_score": self.base_score,
            "n_features": self.n_features,
            "hyperparams": asdict(self.hyperparams),
            "transform": self.transform.to_dict() if self.transform else None,
            "train_deviance": list(self.train_deviance),
            "trees": [
                {
                    "feature": list(t.feature),
                    "threshold": list(t.threshold),
                    "left": list(t.left),
                    "right": list(t.right),
                    "value": list(t.value),
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbtModel":
        if d.get("format") != "gigcount.gbt/1":
            raise ValidationError(f"unsupported model format {d.get('format')!r}")
        trees = tuple(
            Tree(
                feature=tuple(int(v) for v in t["feature"]),
                threshold=tuple(float(v) for v in t["threshold"]),
                left=tuple(int(v) for v in t["left"]),
                right=tuple(int(v) for v in t["right"]),
                value=tuple(float(v) for v in t["value"]),
            )
            for t in d["trees"]
        )
        transform = TransformParams.from_dict(d["transform"]) if d.get("transform") else None
        return cls(
            base_score=float(d["base_score"]),
            trees=trees,
            hyperparams=Hyperparams(**d["hyperparams"]),
            n_features=int(d["n_features"]),
            transform=transform,
            train_deviance=tuple(float(v) for v in d.get("train_deviance", ())),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "GbtModel":
        return cls.from_dict(json.loads(text))


def _check_deviance(deviance: np.ndarray) -> None:
    for t in range(1, deviance.shape[0]):
        prev, cur = deviance[t - 1], deviance[t]
        if cur > prev + 1e-9 * max(1.0, abs(prev)):
            raise InvariantError(
                f"training deviance increased in round {t}: {prev!r} -> {cur!r}"
            )


def fit(X, y, hp: Hyperparams, seed: int = 0) -> GbtModel:
    """Fit a boosted Poisson model on an already-transformed feature matrix.

    `seed` is accepted for interface stability; the learner uses no
    randomness (no row or column subsampling), so the model is a pure
    function of (X, y, hp).
    """
    del seed
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if X.shape[0] < 2:
        raise ValidationError("need at least 2 training rows")
    if not np.isfinite(X).all():
        raise ValidationError("feature matrix contains non-finite values")
    if (y < 0).any() or not np.isfinite(y).all():
        raise ValidationError("targets must be finite and non-negative")
    if not (y > 0).any():
        warnings.warn("all training targets are zero; predictions collapse to ~0",
                      RuntimeWarning, stacklevel=2)

    base_score = math.log(float(y.mean()) + BASE_SCORE_EPS)
    feat, thr, left, right, value, n_nodes, deviance = _boost(
        X, y, base_score, float(hp.learning_rate), int(hp.max_depth), int(hp.num_rounds),
        float(hp.reg_lambda), float(hp.gamma), float(hp.min_child_weight),
        float(hp.max_delta_step),
    )
    if hp.gamma == 0:
        _check_deviance(deviance)
    trees = tuple(
        Tree(
            feature=tuple(int(v) for v in feat[t, :m]),
            threshold=tuple(float(v) for v in thr[t, :m]),
            left=tuple(int(v) for v in left[t, :m]),
            right=tuple(int(v) for v in right[t, :m]),
            value=tuple(float(v) for v in value[t, :m]),
        )
        for t, m in enumerate(n_nodes)
    )
    return GbtModel(base_score, trees, hp, X.shape[1],
                    train_deviance=tuple(float(v) for v in deviance))


def predict_log(model: GbtModel, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValidationError(
            f"feature-count mismatch: model expects {model.n_features}, got shape {X.shape}"
        )
    if not model.trees:
        return np.full(X.shape[0], model.base_score)
    return _predict_log(X, model.base_score, float(model.hyperparams.learning_rate),
                        *model._stacked())


def predict(model: GbtModel, X) -> np.ndarray:
    """Predicted counts, ``exp`` of the log-scale score; always > 0."""
    return np.exp(predict_log(model, X))


def poisson_deviance(pred_log, y) -> float:
    pred_log = np.asarray(pred_log, dtype=float)
    return float(np.sum(np.exp(pred_log) - np.asarray(y, dtype=float) * pred_log))


def rmse(pred, actual) -> float:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise ValidationError(f"length mismatch: {pred.shape} vs {actual.shape}")
    if pred.size == 0:
        raise ValidationError("rmse of empty input")
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def split_train_validation(n: int, fraction_train: float, seed: int):
    """Random disjoint split; the training side gets floor(n * fraction_train) rows."""
    if not 0 < fraction_train < 1:
        raise ValidationError("fraction_train must be in (0, 1)")
    n_train = math.floor(round(n * fraction_train, 9))
    if n_train < 1 or n_train >= n:
        raise ValidationError(
            f"degenerate split: {n} rows at fraction {fraction_train} gives {n_train} training rows"
        )
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


@dataclass(frozen=True)
class GridSearchResult:
    best: Hyperparams
    validation_rmse: float
    all_trials: tuple[tuple[Hyperparams, float], ...]
    train_index: tuple[int, ...] = ()
    validation_index: tuple[int, ...] = ()


def grid_search(X, y, grid: Sequence[Hyperparams], seed: int,
                fraction_train: float = 0.8) -> GridSearchResult:
    """Train on one side of a seeded split, score RMSE on the other, keep the best.

    Ties on RMSE go to fewer rounds, then shallower trees, then grid order.
    """
    grid = list(grid)
    if not grid:
        raise ValidationError("empty hyperparameter grid")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    train, valid = split_train_validation(len(y), fraction_train, seed)
    trials = []
    for i, hp in enumerate(grid):
        try:
            model = fit(X[train], y[train], hp, seed)
            score = rmse(predict(model, X[valid]), y[valid])
        except (ValidationError, InvariantError) as exc:
            raise type(exc)(f"grid point {i} {hp}: {exc}") from exc
        trials.append((hp, score))
    order = sorted(range(len(trials)), key=lambda i: (
        trials[i][1], trials[i][0].num_rounds, trials[i][0].max_depth, i))
    best_hp, best_rmse = trials[order[0]]
    return GridSearchResult(best_hp, best_rmse, tuple(trials),
                            tuple(int(i) for i in train), tuple(int(i) for i in valid))


def grid_from_lists(**axes: Iterable) -> list[Hyperparams]:
    """Cartesian product of per-field value lists, in the given field order."""
    names = list(axes)
    return [Hyperparams(**dict(zip(names, combo)))
            for combo in itertools.product(*(list(v) for v in axes.values()))]
