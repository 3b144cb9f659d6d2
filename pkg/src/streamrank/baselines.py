"""Offline feature-scoring comparators: two-class Fisher criterion,
chi-squared over per-class feature mass, histogram plug-in mutual
information, and recursive feature elimination on the linear SVM, with a
harness that measures selection time and downstream accuracy.

All scorers take a raw feature matrix X of shape (n, p) and an integer label
vector y in {0, 1}, and return higher-is-more-relevant scores.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .model import (
    Hyperparams,
    ModelState,
    RunningNorm,
    append_dummy,
    init_model,
    predict_batch,
    _sgd_step_arrays,
)

logger = logging.getLogger(__name__)

METHODS = ("fisher", "chi2", "mutual_info", "rfe", "svm_weights")


@dataclass
class ScoredFeatures:
    method: str
    scores: np.ndarray
    elapsed: float


def _check_xy(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"bad shapes: X {X.shape}, y {y.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty data")
    return X, y


def fisher_score(X: np.ndarray, y: np.ndarray) -> ScoredFeatures:
    """Two-class Fisher criterion per feature, population variances.

    score_j = (n0 (m0 - m)^2 + n1 (m1 - m)^2) / (n0 v0 + n1 v1); a zero
    within-class scatter yields score 0 rather than infinity.
    """
    X, y = _check_xy(X, y)
    t0 = time.perf_counter()
    mask1 = y == 1
    n0, n1 = int((~mask1).sum()), int(mask1.sum())
    if n0 == 0 or n1 == 0:
        raise ValueError("fisher_score needs both classes present")
    mu = X.mean(axis=0)
    mu0 = X[~mask1].mean(axis=0)
    mu1 = X[mask1].mean(axis=0)
    v0 = X[~mask1].var(axis=0)
    v1 = X[mask1].var(axis=0)
    between = n0 * (mu0 - mu) ** 2 + n1 * (mu1 - mu) ** 2
    within = n0 * v0 + n1 * v1
    scores = np.divide(between, within, out=np.zeros_like(between), where=within > 0)
    return ScoredFeatures("fisher", scores, time.perf_counter() - t0)


def chi2_score(X: np.ndarray, y: np.ndarray) -> ScoredFeatures:
    """Chi-squared statistic of per-class feature mass against class priors.

    Features are shifted by their minimum first so the mass is non-negative;
    a feature with zero total mass scores 0.
    """
    X, y = _check_xy(X, y)
    t0 = time.perf_counter()
    mask1 = y == 1
    n0, n1 = int((~mask1).sum()), int(mask1.sum())
    if n0 == 0 or n1 == 0:
        raise ValueError("chi2_score needs both classes present")
    shifted = X - X.min(axis=0)
    obs0 = shifted[~mask1].sum(axis=0)
    obs1 = shifted[mask1].sum(axis=0)
    total = obs0 + obs1
    n = n0 + n1
    exp0 = total * (n0 / n)
    exp1 = total * (n1 / n)
    scores = np.zeros(X.shape[1])
    nz = total > 0
    scores[nz] = (obs0[nz] - exp0[nz]) ** 2 / exp0[nz] + (obs1[nz] - exp1[nz]) ** 2 / exp1[nz]
    return ScoredFeatures("chi2", scores, time.perf_counter() - t0)


def bin_feature(col: np.ndarray, bins: int) -> np.ndarray:
    """Equal-width binning over the observed range; a constant column is bin 0."""
    lo = col.min()
    hi = col.max()
    if hi == lo:
        return np.zeros(col.shape[0], dtype=int)
    idx = np.floor((col - lo) / (hi - lo) * bins).astype(int)
    return np.clip(idx, 0, bins - 1)


def mutual_info_score(X: np.ndarray, y: np.ndarray, bins: int = 10) -> ScoredFeatures:
    """Plug-in mutual information (nats) between each binned feature and the label."""
    X, y = _check_xy(X, y)
    if bins < 2:
        raise ValueError("bins must be >= 2")
    t0 = time.perf_counter()
    n = X.shape[0]
    py = np.array([(y == 0).sum(), (y == 1).sum()]) / n
    scores = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        b = bin_feature(X[:, j], bins)
        joint = np.bincount(b * 2 + y, minlength=bins * 2).reshape(bins, 2) / n
        px = joint.sum(axis=1)
        mi = 0.0
        for bi in range(bins):
            for yi in range(2):
                p = joint[bi, yi]
                if p > 0 and py[yi] > 0:
                    mi += p * math.log(p / (px[bi] * py[yi]))
        scores[j] = max(0.0, mi)
    return ScoredFeatures("mutual_info", scores, time.perf_counter() - t0)


def _fit_norm_subsample(
    X: np.ndarray, rng: np.random.Generator, max_rows: int = 2000
) -> RunningNorm:
    # Statistics from a subsample keep SVM selection cost independent of n.
    if X.shape[0] > max_rows:
        idx = rng.choice(X.shape[0], size=max_rows, replace=False)
        X = X[idx]
    return RunningNorm.initial(X.shape[1]).update(X)


def train_linear_svm(
    X: np.ndarray,
    y: np.ndarray,
    hyper: Hyperparams,
    rng: np.random.Generator,
    steps: int = 400,
) -> tuple[ModelState, RunningNorm]:
    """Train a linear SVM by mini-batch SGD with a fixed step budget.

    Each step draws batch_size rows uniformly, so the cost does not grow
    with the dataset; z-score statistics come from a subsample for the same
    reason.  Returns the model (weights in normalized space) and the scaler.
    """
    X, y = _check_xy(X, y)
    norm = _fit_norm_subsample(X, rng)
    model = init_model([f"x{j}" for j in range(X.shape[1])], hyper)
    model = replace(model, norm=norm)
    ys = np.where(y == 0, 1.0, -1.0)
    m = hyper.batch_size
    for _ in range(steps):
        idx = rng.integers(0, X.shape[0], size=min(m, X.shape[0]))
        rows = append_dummy(norm.transform(X[idx]))
        model = _sgd_step_arrays(model, rows, ys[idx])
    return model, norm


def svm_weight_score(
    X: np.ndarray,
    y: np.ndarray,
    hyper: Hyperparams | None = None,
    seed: int = 0,
    steps: int = 400,
) -> ScoredFeatures:
    """Score features by |weight| of an SGD-trained linear SVM."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    model, _ = train_linear_svm(X, y, hyper or Hyperparams(), rng, steps=steps)
    scores = np.abs(model.weights[:-1])
    return ScoredFeatures("svm_weights", scores, time.perf_counter() - t0)


def rfe(
    X: np.ndarray,
    y: np.ndarray,
    hyper: Hyperparams | None = None,
    target_k: int = 20,
    seed: int = 0,
    steps: int = 400,
) -> ScoredFeatures:
    """Recursive feature elimination over the linear SVM.

    Train, drop the feature with the smallest |weight| (ties drop the higher
    index), retrain on the survivors, and repeat until target_k remain.  The
    score is the elimination round; survivors share the top score.
    """
    X, y = _check_xy(X, y)
    hyper = hyper or Hyperparams()
    p = X.shape[1]
    if not 1 <= target_k <= p:
        raise ValueError(f"target_k must be in [1, {p}]")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    if target_k == p:
        model, _ = train_linear_svm(X, y, hyper, rng, steps=steps)
        return ScoredFeatures("rfe", np.abs(model.weights[:-1]), time.perf_counter() - t0)
    remaining = list(range(p))
    scores = np.zeros(p)
    round_no = 0
    while len(remaining) > target_k:
        round_no += 1
        model, _ = train_linear_svm(X[:, remaining], y, hyper, rng, steps=steps)
        mags = np.abs(model.weights[:-1])
        drop_pos = int(np.lexsort((-np.arange(len(remaining)), mags))[0])
        scores[remaining[drop_pos]] = round_no
        remaining.pop(drop_pos)
    for j in remaining:
        scores[j] = round_no + 1
    return ScoredFeatures("rfe", scores, time.perf_counter() - t0)


_SCORERS: dict[str, Callable[..., ScoredFeatures]] = {
    "fisher": lambda X, y, **kw: fisher_score(X, y),
    "chi2": lambda X, y, **kw: chi2_score(X, y),
    "mutual_info": lambda X, y, **kw: mutual_info_score(X, y, bins=kw.get("bins", 10)),
    "rfe": lambda X, y, **kw: rfe(
        X, y, kw.get("hyper"), kw.get("k", 20), kw.get("seed", 0), kw.get("steps", 400)
    ),
    "svm_weights": lambda X, y, **kw: svm_weight_score(
        X, y, kw.get("hyper"), kw.get("seed", 0), kw.get("steps", 400)
    ),
}


@dataclass
class ComparisonRow:
    method: str
    elapsed: float
    accuracy: float
    selected: list[int]  # 1-based feature indices
    error: str | None = None


def top_k_indices(scores: np.ndarray, k: int) -> list[int]:
    """1-based indices of the k best scores, ties broken by ascending index."""
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return sorted(int(i) + 1 for i in order[:k])


def stratified_split(
    y: np.ndarray, test_fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffled split; returns (train_idx, test_idx)."""
    train_parts, test_parts = [], []
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.shape[0])]
        n_test = int(round(test_fraction * idx.shape[0]))
        test_parts.append(idx[:n_test])
        train_parts.append(idx[n_test:])
    return np.sort(np.concatenate(train_parts)), np.sort(np.concatenate(test_parts))


def compare(
    X: np.ndarray,
    y: np.ndarray,
    k: int,
    methods: Sequence[str] = METHODS,
    seed: int = 0,
    test_fraction: float = 0.3,
    bins: int = 10,
    hyper: Hyperparams | None = None,
    steps: int = 400,
    downstream_steps: int = 1500,
) -> list[ComparisonRow]:
    """Run each scorer, then measure downstream accuracy of a linear SVM
    retrained on the selected k features.

    Timing covers selection only.  A failing method gets its own error row
    and does not disturb the others.
    """
    X, y = _check_xy(X, y)
    if not 1 <= k <= X.shape[1]:
        raise ValueError(f"k must be in [1, {X.shape[1]}]")
    unknown = [m for m in methods if m not in _SCORERS]
    if unknown:
        raise ValueError(f"unknown methods: {unknown}")
    hyper = hyper or Hyperparams()
    split_rng = np.random.default_rng(seed)
    train_idx, test_idx = stratified_split(y, test_fraction, split_rng)
    Xtr, ytr = X[train_idx], y[train_idx]
    Xte, yte = X[test_idx], y[test_idx]

    rows = []
    for method in methods:
        try:
            scored = _SCORERS[method](Xtr, ytr, k=k, seed=seed, bins=bins, hyper=hyper, steps=steps)
            selected = top_k_indices(scored.scores, k)
            cols = [i - 1 for i in selected]
            eval_rng = np.random.default_rng(seed + 1)
            model, norm = train_linear_svm(
                Xtr[:, cols], ytr, hyper, eval_rng, steps=downstream_steps
            )
            preds = predict_batch(model.weights, append_dummy(norm.transform(Xte[:, cols])))
            accuracy = float((preds == yte).mean())
            rows.append(ComparisonRow(method, scored.elapsed, accuracy, selected))
        except Exception as exc:  # isolate per-method failures
            logger.warning("method %s failed: %s", method, exc)
            rows.append(ComparisonRow(method, math.nan, math.nan, [], error=str(exc)))
    return rows


def write_comparison_csv(rows: Sequence[ComparisonRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "elapsed_s", "accuracy", "selected_indices"])
        for row in rows:
            writer.writerow(
                [
                    row.method,
                    repr(row.elapsed),
                    repr(row.accuracy),
                    ";".join(str(i) for i in row.selected),
                ]
            )
