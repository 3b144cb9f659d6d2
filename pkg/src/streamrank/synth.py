"""Synthetic labeled streams with planted linear concepts and scheduled
concept drift, plus a brute-force grid minimizer used as an independent
check on SGD training.

Feature columns mimic the value domains of the real packet schema (flag
bits, port numbers, length fields, timing), so the normalization machinery
sees realistic scale spreads.  Labels come from the sign of a planted linear
function of the raw features and are then flipped with a per-regime noise
probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .features import FEATURE_NAMES, N_FEATURES, ExtractedRecord
from .model import LabeledExample, stack_batch

# Value domain of each synthetic feature column, in schema order.
#   ("const", v)        constant value (exercises zero-variance handling)
#   ("int", lo, hi)     uniform integer, inclusive bounds
#   ("real", lo, hi)    uniform real
#   ("bern", p)         Bernoulli flag
#   ("choice", values)  uniform pick from a small set
FEATURE_DOMAINS: dict[str, tuple] = {
    "eth_type": ("const", 2048.0),
    "ip_header_len": ("const", 20.0),
    "ip_tos": ("int", 0, 255),
    "ip_total_len": ("int", 40, 1514),
    "ip_ttl": ("int", 1, 255),
    "ip_protocol": ("choice", (1.0, 6.0, 17.0)),
    "tcp_src_port": ("int", 0, 65535),
    "tcp_dst_port": ("int", 0, 65535),
    "udp_src_port": ("int", 0, 65535),
    "udp_dst_port": ("int", 0, 65535),
    "l4_length": ("int", 0, 1460),
    "icmp_type": ("int", 0, 40),
    "icmp_code": ("int", 0, 15),
    "flow_duration": ("real", 0.0, 300.0),
    "flow_start_time": ("real", 0.0, 86400.0),
    "is_fragment": ("bern", 0.05),
    "frag_overlap": ("bern", 0.02),
    "tcp_ack": ("bern", 0.5),
    "tcp_retransmission": ("bern", 0.1),
    "tcp_psh": ("bern", 0.3),
    "tcp_syn": ("bern", 0.15),
    "tcp_fin": ("bern", 0.1),
    "tcp_urg": ("bern", 0.02),
}
for _name in FEATURE_NAMES:
    if _name not in FEATURE_DOMAINS:  # MAC / IP address octets
        FEATURE_DOMAINS[_name] = ("int", 0, 255)

_DOMAINS: tuple[tuple, ...] = tuple(FEATURE_DOMAINS[name] for name in FEATURE_NAMES)


def domain_std(domain: tuple) -> float:
    """Population standard deviation of one column's sampling distribution."""
    kind = domain[0]
    if kind == "const":
        return 0.0
    if kind == "int":
        span = domain[2] - domain[1] + 1
        return math.sqrt((span * span - 1) / 12.0)
    if kind == "real":
        return (domain[2] - domain[1]) / math.sqrt(12.0)
    if kind == "bern":
        return math.sqrt(domain[1] * (1.0 - domain[1]))
    if kind == "choice":
        vals = np.asarray(domain[1], dtype=float)
        return float(vals.std())
    raise ValueError(f"unknown domain kind {kind!r}")


def _sample_column(domain: tuple, n: int, rng: np.random.Generator) -> np.ndarray:
    kind = domain[0]
    if kind == "const":
        return np.full(n, domain[1])
    if kind == "int":
        return rng.integers(domain[1], domain[2], size=n, endpoint=True).astype(float)
    if kind == "real":
        return rng.uniform(domain[1], domain[2], size=n)
    if kind == "bern":
        return (rng.random(n) < domain[1]).astype(float)
    if kind == "choice":
        return rng.choice(np.asarray(domain[1], dtype=float), size=n)
    raise ValueError(f"unknown domain kind {kind!r}")


@dataclass(frozen=True)
class RegimeSpec:
    """One stationary stretch of the stream: a planted concept, label noise,
    and a length in windows."""

    true_weights: np.ndarray
    noise_rate: float
    duration: int

    def __post_init__(self) -> None:
        w = np.asarray(self.true_weights, dtype=float)
        if w.shape != (N_FEATURES,):
            raise ValueError(f"true_weights must have shape ({N_FEATURES},)")
        if not np.any(w != 0):
            raise ValueError("true_weights must have at least one nonzero entry")
        if not 0.0 <= self.noise_rate < 0.5:
            raise ValueError("noise_rate must be in [0, 0.5)")
        if self.duration < 1:
            raise ValueError("duration must be >= 1 window")


@dataclass(frozen=True)
class DriftSchedule:
    regimes: tuple[RegimeSpec, ...]

    def __post_init__(self) -> None:
        if not self.regimes:
            raise ValueError("schedule needs at least one regime")

    @property
    def total_windows(self) -> int:
        return sum(r.duration for r in self.regimes)


def planted_concept(
    rng: np.random.Generator,
    n_planted: int = 5,
    indices: Sequence[int] | None = None,
) -> tuple[np.ndarray, list[int]]:
    """Pick informative features and weight them inversely to their scale.

    Returns (true_weights over the 43 raw features, chosen 0-based indices).
    Signs are mixed so the concept splits the all-nonnegative feature space
    into two usable classes.  Constant columns are never chosen.
    """
    eligible = [i for i, d in enumerate(_DOMAINS) if domain_std(d) > 0]
    if indices is None:
        chosen = sorted(rng.choice(eligible, size=n_planted, replace=False).tolist())
    else:
        chosen = sorted(int(i) for i in indices)
        if any(domain_std(_DOMAINS[i]) == 0 for i in chosen):
            raise ValueError("cannot plant a concept on a constant feature")
    signs = np.where(rng.random(len(chosen)) < 0.5, 1.0, -1.0)
    if len(chosen) >= 2 and np.all(signs == signs[0]):
        signs[rng.integers(len(chosen))] *= -1.0
    weights = np.zeros(N_FEATURES)
    for sign, i in zip(signs, chosen):
        weights[i] = sign / domain_std(_DOMAINS[i])
    return weights, chosen


def generate(schedule: DriftSchedule, window_size: int, seed: int) -> Iterator[ExtractedRecord]:
    """Yield labeled records regime by regime; fully determined by the seed.

    A record is an attack exactly when true_weights . features < 0, before
    the independent label flips at the regime's noise rate.  Regime switches
    happen precisely at window boundaries.
    """
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    rng = np.random.default_rng(seed)
    t = 0
    for regime in schedule.regimes:
        n = regime.duration * window_size
        X = np.empty((n, N_FEATURES))
        for j, domain in enumerate(_DOMAINS):
            X[:, j] = _sample_column(domain, n, rng)
        labels = (X @ np.asarray(regime.true_weights, dtype=float) < 0.0).astype(int)
        flips = rng.random(n) < regime.noise_rate
        labels = labels ^ flips.astype(int)
        for i in range(n):
            yield ExtractedRecord(features=X[i], timestamp=float(t), label=int(labels[i]))
            t += 1


def grid_oracle(
    data: Sequence[LabeledExample],
    grid_range: tuple[float, float],
    grid_step: float,
    lam: float,
    max_points: float = 1e8,
) -> tuple[np.ndarray, float]:
    """Exhaustively minimize the regularized empirical risk over a weight grid.

    Independent of the SGD path: every grid point is evaluated directly.
    Intended for tiny instances (d <= 3 including the dummy component).
    """
    X, ys = stack_batch(data)
    d = X.shape[1]
    lo, hi = grid_range
    n_axis = int(round((hi - lo) / grid_step)) + 1
    if float(n_axis) ** d > max_points:
        raise ValueError(f"grid of {n_axis}^{d} points exceeds limit {max_points:g}")
    axis = lo + grid_step * np.arange(n_axis)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    W = np.stack([g.ravel() for g in grids], axis=1)

    best_risk = math.inf
    best_w = W[0]
    chunk = 200_000
    for start in range(0, W.shape[0], chunk):
        Wc = W[start : start + chunk]
        hinge = np.maximum(0.0, 1.0 - ys[:, None] * (X @ Wc.T)).mean(axis=0)
        risks = hinge + 0.5 * lam * (Wc * Wc).sum(axis=1)
        i = int(np.argmin(risks))
        if risks[i] < best_risk:
            best_risk = float(risks[i])
            best_w = Wc[i].copy()
    return best_w, best_risk
