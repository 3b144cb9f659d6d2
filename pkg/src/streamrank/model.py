"""Linear SVM core: regularized hinge loss, mini-batch subgradient descent,
prediction and weight-based feature ranking.

Conventions used throughout:

* Labels are external integers, 0 = normal traffic, 1 = attack.  Internally
  the SVM works with signed labels where normal maps to +1 and attack to -1,
  so features that indicate attacks end up with negative weights.
* Feature vectors have a trailing dummy component fixed at 1.0 that absorbs
  the bias, so the model dimension d is (number of named features) + 1.
* A decision value w.x >= 0 predicts normal; ties at exactly zero are normal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NORMAL = 0
ATTACK = 1

CHECKPOINT_SCHEMA_VERSION = 1


def signed_label(label: int) -> float:
    """Map an external {0, 1} label to the internal signed label {+1, -1}."""
    if label not in (NORMAL, ATTACK):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    return 1.0 if label == NORMAL else -1.0


@dataclass(frozen=True)
class Hyperparams:
    """SVM training hyperparameters: L2 strength, constant step size, batch size."""

    lam: float = 1e-4
    alpha: float = 0.01
    batch_size: int = 32

    def __post_init__(self) -> None:
        # lam == 0 is accepted for unregularized runs and tests.
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class LabeledExample:
    """One normalized feature vector (dummy component included) with its label."""

    x: np.ndarray
    label: int


@dataclass(frozen=True)
class RunningNorm:
    """Streaming per-feature z-score statistics (population variance).

    The canonical state is (count, mean, var); updates are Welford steps
    carried out in variance space so a checkpointed state restores exactly.
    The dummy feature is never part of these statistics.  Zero-variance
    features are centered but not scaled.
    """

    count: int
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def initial(cls, n_features: int) -> "RunningNorm":
        return cls(0, np.zeros(n_features), np.zeros(n_features))

    def update(self, rows: np.ndarray) -> "RunningNorm":
        """Fold a (n, n_features) block of raw rows into the statistics."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if rows.shape[1] != self.mean.shape[0]:
            raise ValueError(
                f"expected {self.mean.shape[0]} features, got {rows.shape[1]}"
            )
        n = self.count
        mean = self.mean.copy()
        var = self.var.copy()
        for x in rows:
            n += 1
            delta = x - mean
            mean += delta / n
            var = (var * (n - 1) + delta * (x - mean)) / n
        return RunningNorm(n, mean, var)

    def transform(self, rows: np.ndarray) -> np.ndarray:
        """Z-score a (n, n_features) block; identity before any update."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if rows.shape[1] != self.mean.shape[0]:
            raise ValueError(
                f"expected {self.mean.shape[0]} features, got {rows.shape[1]}"
            )
        if self.count == 0:
            return rows.copy()
        scale = np.sqrt(self.var)
        out = rows - self.mean
        nonzero = scale > 0
        out[:, nonzero] /= scale[nonzero]
        return out


@dataclass(frozen=True)
class ModelState:
    """Weight vector plus everything needed to keep training it."""

    weights: np.ndarray
    hyper: Hyperparams
    iteration: int
    norm: RunningNorm
    feature_names: tuple[str, ...]

    @property
    def d(self) -> int:
        return self.weights.shape[0]


def init_model(feature_names: Sequence[str], hyper: Hyperparams | None = None) -> ModelState:
    """Fresh model: zero weights (d = len(names) + 1 for the dummy), empty stats."""
    names = tuple(feature_names)
    d = len(names) + 1
    return ModelState(
        weights=np.zeros(d),
        hyper=hyper or Hyperparams(),
        iteration=0,
        norm=RunningNorm.initial(len(names)),
        feature_names=names,
    )


def append_dummy(rows: np.ndarray) -> np.ndarray:
    """Append the constant-1 bias column to a (n, d-1) block."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    return np.hstack([rows, np.ones((rows.shape[0], 1))])


def _check_pair(w: np.ndarray, x: np.ndarray) -> None:
    if w.ndim != 1 or x.ndim != 1 or w.shape != x.shape:
        raise ValueError(f"dimension mismatch: weights {w.shape}, vector {x.shape}")


def hinge_loss(w: np.ndarray, x: np.ndarray, label: int, lam: float) -> float:
    """Regularized hinge loss of one example: max(0, 1 - y w.x) + (lam/2)||w||^2."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_pair(w, x)
    if not (np.isfinite(w).all() and np.isfinite(x).all()):
        raise ValueError("non-finite weights or features")
    margin = signed_label(label) * float(w @ x)
    return max(0.0, 1.0 - margin) + 0.5 * lam * float(w @ w)


def predict(w: np.ndarray, x: np.ndarray) -> int:
    """Classify one vector: 0 (normal) when w.x >= 0, 1 (attack) otherwise."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_pair(w, x)
    return NORMAL if float(w @ x) >= 0.0 else ATTACK


def predict_batch(w: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Vectorized predict over a (n, d) block; returns an int array of {0, 1}."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != w.shape[0]:
        raise ValueError(f"dimension mismatch: weights {w.shape}, rows {rows.shape}")
    return np.where(rows @ w >= 0.0, NORMAL, ATTACK).astype(int)


def stack_batch(batch: Sequence[LabeledExample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack examples into (X, y_signed); rejects empty batches."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    X = np.stack([np.asarray(ex.x, dtype=float) for ex in batch])
    ys = np.array([signed_label(ex.label) for ex in batch])
    return X, ys


def _subgradient_arrays(w: np.ndarray, X: np.ndarray, ys: np.ndarray, lam: float) -> np.ndarray:
    margins = ys * (X @ w)
    active = margins < 1.0
    data_term = (ys[active, None] * X[active]).sum(axis=0) / X.shape[0]
    return lam * w - data_term


def subgradient(w: np.ndarray, batch: Sequence[LabeledExample], lam: float) -> np.ndarray:
    """Subgradient of the batch-averaged regularized hinge loss at w.

    Examples with margin >= 1 contribute nothing; the rest contribute
    -y_j x_j / M, plus the lam * w regularizer term.
    """
    X, ys = stack_batch(batch)
    w = np.asarray(w, dtype=float)
    if X.shape[1] != w.shape[0]:
        raise ValueError(f"dimension mismatch: weights {w.shape}, batch rows {X.shape}")
    return _subgradient_arrays(w, X, ys, lam)


def _sgd_step_arrays(model: ModelState, X: np.ndarray, ys: np.ndarray) -> ModelState:
    g = _subgradient_arrays(model.weights, X, ys, model.hyper.lam)
    w = model.weights - model.hyper.alpha * g
    if not np.isfinite(w).all():
        raise FloatingPointError(
            "weights diverged to non-finite values; lower the learning rate"
        )
    return replace(model, weights=w, iteration=model.iteration + 1)


def sgd_step(model: ModelState, batch: Sequence[LabeledExample]) -> ModelState:
    """One mini-batch update: w <- w - alpha * subgradient(w, batch, lam)."""
    if len(batch) > model.hyper.batch_size:
        raise ValueError(
            f"batch of {len(batch)} exceeds configured batch_size {model.hyper.batch_size}"
        )
    X, ys = stack_batch(batch)
    if X.shape[1] != model.d:
        raise ValueError(f"dimension mismatch: model d={model.d}, batch rows {X.shape}")
    return _sgd_step_arrays(model, X, ys)


def empirical_risk(w: np.ndarray, data: Sequence[LabeledExample], lam: float) -> float:
    """Mean hinge term over the data plus the regularizer counted once."""
    X, ys = stack_batch(data)
    w = np.asarray(w, dtype=float)
    if X.shape[1] != w.shape[0]:
        raise ValueError(f"dimension mismatch: weights {w.shape}, data rows {X.shape}")
    terms = np.maximum(0.0, 1.0 - ys * (X @ w))
    return float(terms.mean() + 0.5 * lam * float(w @ w))


@dataclass(frozen=True)
class RankEntry:
    index: int  # Table position, 1-based
    name: str
    weight: float
    rank: int


@dataclass(frozen=True)
class FeatureRanking:
    """Features ordered by |weight| descending; the dummy weight is the bias."""

    entries: tuple[RankEntry, ...]
    bias: float

    def top_k(self, k: int) -> tuple[RankEntry, ...]:
        return self.entries[: max(0, k)]


def rank_features(model: ModelState, feature_names: Sequence[str] | None = None) -> FeatureRanking:
    """Rank features by absolute weight, ties broken by ascending feature index."""
    names = tuple(feature_names) if feature_names is not None else model.feature_names
    if len(names) != model.d - 1:
        raise ValueError(f"expected {model.d - 1} feature names, got {len(names)}")
    w = model.weights[:-1]
    mags = np.abs(w)
    order = np.lexsort((np.arange(len(w)), -mags))
    entries = tuple(
        RankEntry(index=int(i) + 1, name=names[i], weight=float(w[i]), rank=r + 1)
        for r, i in enumerate(order)
    )
    return FeatureRanking(entries=entries, bias=float(model.weights[-1]))


def select_top_k(ranking: FeatureRanking, k: int) -> set[int]:
    """Indices (1-based) of the k highest-ranked features."""
    if not 1 <= k <= len(ranking.entries):
        raise ValueError(f"k must be in [1, {len(ranking.entries)}], got {k}")
    return {e.index for e in ranking.entries[:k]}


def save_checkpoint(model: ModelState, path: str | Path) -> None:
    """Write the model as a versioned JSON document.

    Floats are serialized with their shortest round-trip representation, so
    load(save(m)) restores every value exactly.  norm_count is carried in
    addition to the mean/variance arrays so streaming statistics can keep
    updating after a restore.
    """
    doc = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "d": model.d,
        "weights": [float(v) for v in model.weights],
        "lambda": model.hyper.lam,
        "alpha": model.hyper.alpha,
        "batch_size": model.hyper.batch_size,
        "iteration": model.iteration,
        "norm_means": [float(v) for v in model.norm.mean],
        "norm_vars": [float(v) for v in model.norm.var],
        "norm_count": model.norm.count,
        "feature_names": list(model.feature_names),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> ModelState:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    version = doc.get("schema_version")
    if version != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema_version: {version!r}")
    weights = np.array(doc["weights"], dtype=float)
    if weights.shape[0] != doc["d"]:
        raise ValueError("checkpoint d does not match weights length")
    names = tuple(doc["feature_names"])
    if len(names) != doc["d"] - 1:
        raise ValueError("checkpoint feature_names length does not match d")
    norm = RunningNorm(
        count=int(doc["norm_count"]),
        mean=np.array(doc["norm_means"], dtype=float),
        var=np.array(doc["norm_vars"], dtype=float),
    )
    hyper = Hyperparams(
        lam=float(doc["lambda"]),
        alpha=float(doc["alpha"]),
        batch_size=int(doc["batch_size"]),
    )
    return ModelState(
        weights=weights,
        hyper=hyper,
        iteration=int(doc["iteration"]),
        norm=norm,
        feature_names=names,
    )
