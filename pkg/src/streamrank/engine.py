"""Streaming loop: pretrain on an initial prefix, then score each fixed-size
window with the entering model (prequential order), measure windowed MSE
against the true labels, and retrain on the window when the error crosses
the configured threshold.

For binary labels the windowed MSE equals the misclassification fraction, so
the retrain threshold is directly an error-rate budget.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace
from itertools import islice
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .features import FEATURE_NAMES, ExtractedRecord
from .model import (
    FeatureRanking,
    Hyperparams,
    ModelState,
    append_dummy,
    init_model,
    predict_batch,
    rank_features,
    _sgd_step_arrays,
)

logger = logging.getLogger(__name__)


class InsufficientDataError(ValueError):
    """The input stream ended before the pretraining prefix was filled."""


@dataclass(frozen=True)
class EngineConfig:
    """Knobs of the streaming loop; defaults follow the package-wide choices."""

    window_size: int
    mse_threshold: float = 0.05
    pretrain_windows: int = 100
    pretrain_epochs: int = 5
    epochs_per_retrain: int = 5
    hyper: Hyperparams = Hyperparams()
    seed: int = 0
    frozen: bool = False  # disable retraining entirely (offline baseline)

    def __post_init__(self) -> None:
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if self.window_size < self.hyper.batch_size:
            raise ValueError("window_size must be >= batch_size")
        if not 0.0 <= self.mse_threshold <= 1.0:
            raise ValueError("mse_threshold must be in [0, 1]")
        if self.pretrain_windows < 1 or self.pretrain_epochs < 1 or self.epochs_per_retrain < 1:
            raise ValueError("window/epoch counts must be >= 1")


@dataclass(frozen=True)
class WindowReport:
    """Outcome of one processed window.

    mse is None when the window carried no ground-truth labels at all;
    n_attacks counts the packets the entering model flagged as attacks.
    """

    window_index: int
    mse: float | None
    retrained: bool
    ranking: FeatureRanking
    n_attacks: int
    wall_time: float
    partial: bool = False
    unlabeled: bool = False


def window_mse(truth: Sequence[int], predicted: Sequence[int]) -> float:
    """Mean squared difference of external {0,1} labels; equals the error rate."""
    t = np.asarray(truth, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.shape} vs {p.shape}")
    if t.size == 0:
        raise ValueError("empty label sequences")
    return float(np.mean((t - p) ** 2))


def train_epochs(
    model: ModelState,
    rows: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    rng: np.random.Generator,
) -> ModelState:
    """Mini-batch SGD over already-normalized rows (dummy column included).

    Each epoch reshuffles and walks the data in batch_size chunks without
    replacement; the final chunk of an epoch may be shorter.
    """
    n = rows.shape[0]
    m = model.hyper.batch_size
    ys = np.where(labels == 0, 1.0, -1.0)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, m):
            idx = perm[start : start + m]
            model = _sgd_step_arrays(model, rows[idx], ys[idx])
    return model


def _raw_matrix(records: Sequence[ExtractedRecord], n_features: int) -> np.ndarray:
    X = np.stack([r.features for r in records])
    if X.shape[1] != n_features:
        raise ValueError(f"records carry {X.shape[1]} features, model expects {n_features}")
    return X


def pretrain(
    model: ModelState,
    initial: Sequence[ExtractedRecord],
    epochs: int,
    rng: np.random.Generator,
) -> ModelState:
    """Fit normalization statistics on the initial data, then train over it."""
    if len(initial) == 0:
        raise ValueError("empty pretraining data")
    labels = [r.label for r in initial]
    if any(l is None for l in labels):
        raise ValueError("unlabeled example in pretraining data")
    X_raw = _raw_matrix(initial, model.d - 1)
    norm = model.norm.update(X_raw)
    model = replace(model, norm=norm)
    rows = append_dummy(norm.transform(X_raw))
    return train_epochs(model, rows, np.asarray(labels, dtype=int), epochs, rng)


def process_window(
    model: ModelState,
    window: Sequence[ExtractedRecord],
    config: EngineConfig,
    rng: np.random.Generator,
    window_index: int = 0,
) -> tuple[ModelState, WindowReport]:
    """Predict the window with the entering model, then retrain if needed.

    Predictions are always made before the window's labels touch any state.
    Retraining (and the normalization-statistics update that precedes it)
    happens only when every example is labeled and the MSE exceeds the
    threshold; otherwise the model leaves the window bit-for-bit unchanged.
    """
    if len(window) == 0:
        raise ValueError("empty window")
    t0 = time.perf_counter()
    X_raw = _raw_matrix(window, model.d - 1)
    labels = [r.label for r in window]
    rows = append_dummy(model.norm.transform(X_raw))
    preds = predict_batch(model.weights, rows)

    labeled_idx = [i for i, l in enumerate(labels) if l is not None]
    mse: float | None = None
    if labeled_idx:
        mse = window_mse([labels[i] for i in labeled_idx], preds[labeled_idx])

    all_labeled = len(labeled_idx) == len(window)
    retrained = False
    if not config.frozen and all_labeled and mse is not None and mse > config.mse_threshold:
        norm = model.norm.update(X_raw)
        model = replace(model, norm=norm)
        rows2 = append_dummy(norm.transform(X_raw))
        model = train_epochs(
            model, rows2, np.asarray(labels, dtype=int), config.epochs_per_retrain, rng
        )
        retrained = True

    report = WindowReport(
        window_index=window_index,
        mse=mse,
        retrained=retrained,
        ranking=rank_features(model),
        n_attacks=int(np.sum(preds == 1)),
        wall_time=time.perf_counter() - t0,
        partial=len(window) < config.window_size,
        unlabeled=not labeled_idx,
    )
    return model, report


class StreamEngine:
    """Runs the full loop over a record stream.

    Iterate `run(records)` to get one WindowReport per window; after the
    iterator is exhausted, `model` holds the final state.  Identical config,
    seed and input always reproduce the same reports and final model.
    """

    def __init__(self, config: EngineConfig, feature_names: Sequence[str] = FEATURE_NAMES):
        self.config = config
        self.model = init_model(feature_names, config.hyper)
        self._rng = np.random.default_rng(config.seed)

    def run(self, records: Iterable[ExtractedRecord]) -> Iterator[WindowReport]:
        cfg = self.config
        it = iter(records)
        need = cfg.pretrain_windows * cfg.window_size
        initial = list(islice(it, need))
        if len(initial) < need:
            raise InsufficientDataError(
                f"stream ended after {len(initial)} records; pretraining needs {need}"
            )
        self.model = pretrain(self.model, initial, cfg.pretrain_epochs, self._rng)
        logger.info("pretrained on %d records (%d windows)", need, cfg.pretrain_windows)

        index = 0
        while True:
            window = list(islice(it, cfg.window_size))
            if not window:
                break
            self.model, report = process_window(
                self.model, window, cfg, self._rng, window_index=index
            )
            logger.debug(
                "window %d: mse=%s retrained=%s", index, report.mse, report.retrained
            )
            yield report
            index += 1


def report_to_dict(report: WindowReport, top_k: int = 10, include_timing: bool = False) -> dict:
    """JSON-shaped view of a report.

    wall_time_s is null unless timing is explicitly requested, keeping the
    persisted report stream byte-reproducible across reruns.
    """
    return {
        "window": report.window_index,
        "mse": report.mse,
        "retrained": report.retrained,
        "n_attacks": report.n_attacks,
        "wall_time_s": report.wall_time if include_timing else None,
        "partial": report.partial,
        "unlabeled": report.unlabeled,
        "top_k": [
            {"index": e.index, "name": e.name, "weight": e.weight}
            for e in report.ranking.top_k(top_k)
        ],
    }


def write_report_line(fh: IO[str], report: WindowReport, top_k: int = 10, include_timing: bool = False) -> None:
    fh.write(json.dumps(report_to_dict(report, top_k, include_timing), separators=(",", ":")))
    fh.write("\n")
