"""Pairs bootstrap for the sum of imputed platform sizes."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import gbt
from .errors import ValidationError
from .features import apply_transform, as_matrix, fit_transform

MAX_REDRAWS = 50


def percentile(samples: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q*n)-th smallest value, q=0 giving the minimum."""
    xs = sorted(float(v) for v in samples)
    if not xs:
        raise ValidationError("percentile of empty sample")
    if not 0 <= q <= 1:
        raise ValidationError("q must be in [0, 1]")
    rank = math.ceil(round(q * len(xs), 9))
    return xs[max(rank, 1) - 1]


@dataclass(frozen=True)
class PredictionInterval:
    point: float
    lower: float
    upper: float
    level: float
    replicates: int
    replicate_sums: tuple[float, ...]


def fit_predict_sum(X_obs, y_obs, X_new, hp: gbt.Hyperparams) -> float:
    """Refit transform and model on (X_obs, y_obs); total predicted count over X_new."""
    params, Z = fit_transform(X_obs)
    model = gbt.fit(Z, y_obs, hp)
    return float(np.sum(gbt.predict(model, apply_transform(params, X_new))))


def _replicate(b: int, seed: int, X_obs, y_obs, X_new, hp, max_redraws: int) -> float:
    rng = np.random.default_rng(seed ^ b)
    n = len(y_obs)
    last_error = None
    for _ in range(max_redraws + 1):
        idx = rng.integers(0, n, size=n)
        y = y_obs[idx]
        if not (y > 0).any():
            last_error = "all-zero targets"
            continue
        try:
            return fit_predict_sum(X_obs[idx], y, X_new, hp)
        except ValidationError as exc:
            # constant feature column in the resample
            last_error = str(exc)
    raise ValidationError(
        f"bootstrap replicate {b}: no usable resample after {max_redraws} redraws ({last_error})"
    )


def bootstrap_predict_sum(
    observed_features,
    observed_counts,
    unobserved_features,
    hp: gbt.Hyperparams,
    B: int,
    level: float = 0.95,
    seed: int = 0,
    workers: int = 1,
    order: Optional[Iterable[int]] = None,
) -> PredictionInterval:
    """Percentile interval for the total predicted count of the unobserved rows.

    Replicate ``b`` (1-based) draws from ``default_rng(seed ^ b)``, so the
    result does not depend on execution order or on `workers`. `order`
    overrides the order in which replicates are scheduled.
    """
    if B < 1:
        raise ValidationError("B must be >= 1")
    if not 0 < level < 1:
        raise ValidationError("level must be in (0, 1)")
    X_obs = as_matrix(observed_features)
    y_obs = np.asarray(observed_counts, dtype=float)
    X_new = as_matrix(unobserved_features)
    if len(y_obs) == 0:
        raise ValidationError("no observed rows to resample")
    if X_obs.shape[0] != len(y_obs):
        raise ValidationError("observed features and counts differ in length")

    point = fit_predict_sum(X_obs, y_obs, X_new, hp)

    schedule = list(range(1, B + 1)) if order is None else [int(b) for b in order]
    if sorted(schedule) != list(range(1, B + 1)):
        raise ValidationError("order must be a permutation of 1..B")
    sums: dict[int, float] = {}

    def run(b):
        return b, _replicate(b, seed, X_obs, y_obs, X_new, hp, MAX_REDRAWS)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for b, s in pool.map(run, schedule):
                sums[b] = s
    else:
        for b in schedule:
            sums[b] = run(b)[1]

    replicate_sums = tuple(sums[b] for b in range(1, B + 1))
    alpha = (1 - level) / 2
    return PredictionInterval(
        point=point,
        lower=percentile(replicate_sums, alpha),
        upper=percentile(replicate_sums, 1 - alpha),
        level=level,
        replicates=B,
        replicate_sums=replicate_sums,
    )


def write_replicate_sums(interval: PredictionInterval) -> str:
    return "replicate_sum\n" + "".join(f"{s!r}\n" for s in interval.replicate_sums)
