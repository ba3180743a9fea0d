"""Per-file request-density learning and expected demand per cell.

Each SBS contributes one training sample per (slot, file) of its trailing
window: the features are a bias plus a one-hot file indicator scaled by
``sqrt(M)`` (so the Gram matrix stays well conditioned for gradient
descent), and the target is that file's request count in that slot.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fedlearn import REQUEST, AggregationRound, LinearModel, Mode, TrainingBatch, train


class DegenerateDemandWarning(UserWarning):
    pass


def file_features(file_count: int) -> np.ndarray:
    """Feature row for every file: ``[1, sqrt(M) * onehot(f)]``."""
    X = np.zeros((file_count, file_count + 1))
    X[:, 0] = 1.0
    X[:, 1:] = np.sqrt(file_count) * np.eye(file_count)
    return X


def request_batch(slot_counts) -> TrainingBatch:
    """Training batch from a ``(slots, M)`` array of per-slot request counts at one SBS."""
    counts = np.atleast_2d(np.asarray(slot_counts, dtype=float))
    if np.any(counts < 0):
        raise ValueError("request counts must be non-negative")
    W, M = counts.shape
    X = np.tile(file_features(M), (W, 1))
    return TrainingBatch(X, counts.reshape(-1))


@dataclass
class DemandFit:
    rates: np.ndarray  # predicted requests per slot per file, clamped at 0
    model: LinearModel
    degenerate: bool = False


def fit_request_density(
    batches: Sequence[TrainingBatch],
    file_count: int,
    config: AggregationRound = AggregationRound(),
    mode: Mode = "fedavg",
    init: LinearModel | None = None,
) -> DemandFit:
    """Federated ridge fit of the per-file request rate.

    Without any observed request the rates fall back to uniform ``1/M`` and
    the result is flagged degenerate.
    """
    d = file_count + 1
    if not batches or all(not np.any(b.targets) for b in batches):
        warnings.warn("no observed requests; using uniform request density", DegenerateDemandWarning)
        return DemandFit(np.full(file_count, 1.0 / file_count), init or LinearModel.zeros(d), True)
    result = train(batches, config, mode=mode, task=REQUEST, init=init)
    rates = np.maximum(file_features(file_count) @ result.model.weights, 0.0)
    return DemandFit(rates, result.model)


def pooled_ridge_solution(batches: Sequence[TrainingBatch], ridge: float) -> np.ndarray:
    """Closed-form minimiser of the summed per-participant ridge losses."""
    X = np.vstack([b.inputs for b in batches])
    y = np.concatenate([b.targets for b in batches])
    A = X.T @ X + 2.0 * ridge * len(batches) * np.eye(X.shape[1])
    return np.linalg.solve(A, X.T @ y)


def is_degenerate(rates) -> bool:
    return float(np.sum(rates)) <= 0.0


def popularity(rates) -> np.ndarray:
    """Normalise request rates to a distribution; all-zero input gives uniform (warned)."""
    lam = np.asarray(rates, dtype=float).reshape(-1)
    if np.any(lam < 0):
        raise ValueError("request densities must be non-negative")
    total = lam.sum()
    if total <= 0:
        warnings.warn("zero total demand; using uniform popularity", DegenerateDemandWarning)
        return np.full(lam.size, 1.0 / lam.size)
    return lam / total


def expected_request_density(psi: float, p) -> np.ndarray:
    if psi < 0:
        raise ValueError("pedestrian density must be non-negative")
    return psi * np.asarray(p, dtype=float)


def proposition1_bracket(cluster_counts, present: int, leavers: int, rates, kept: int | None = None):
    """Lower/upper expected-density bounds per file.

    ``lower = (present - leavers) * p`` and
    ``upper = (sum of the first ``kept`` cluster sizes + present - leavers) * p``.
    """
    counts = list(cluster_counts)
    if kept is None:
        kept = len(counts)
    if any(c < 0 for c in counts) or present < 0 or leavers < 0:
        raise ValueError("counts must be non-negative")
    p = popularity(rates)
    base = present - leavers
    return base * p, (sum(counts[:kept]) + base) * p


@dataclass
class DensityEstimate:
    psi: np.ndarray  # per cell
    raw_lambda: np.ndarray  # per file
    popularity: np.ndarray  # per file
    expected: np.ndarray  # (cells, files)
    degenerate: bool = False

    @classmethod
    def build(cls, psi, rates, degenerate: bool = False) -> "DensityEstimate":
        psi = np.asarray(psi, dtype=float)
        rates = np.asarray(rates, dtype=float)
        degenerate = degenerate or is_degenerate(rates)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateDemandWarning)
            p = popularity(rates)
        return cls(psi, rates, p, np.outer(psi, p), degenerate)
