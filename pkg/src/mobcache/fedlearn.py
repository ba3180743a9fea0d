"""Federated linear-model training shared by both prediction tasks.

Task 1 uses the plain squared error ``||X w - y||^2``; task 2 uses the ridge
loss ``1/2 ||y - X w||^2 + alpha ||w||^2``. Gradients are taken of the whole
batch loss, so the per-participant SGD step is
``w - (eta / Q_i) * grad(batch loss)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .core import DivergenceError

PEDESTRIAN = 1
REQUEST = 2

Mode = Literal["fedavg", "paper-faithful"]


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    task: int = REQUEST

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise DivergenceError("model weights are not finite")
        if self.task not in (PEDESTRIAN, REQUEST):
            raise ValueError(f"unknown task {self.task}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, dim: int, task: int = REQUEST) -> "LinearModel":
        return cls(np.zeros(dim), task)

    @property
    def dim(self) -> int:
        return int(self.weights.size)

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights


@dataclass(frozen=True)
class TrainingBatch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        X = np.array(self.inputs, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        y = np.array(self.targets, dtype=float).reshape(-1)
        if X.shape[0] != y.size:
            raise ValueError(f"{X.shape[0]} input rows but {y.size} targets")
        if y.size == 0:
            raise ValueError("a training batch needs at least one sample")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)

    @property
    def sample_count(self) -> int:
        return int(self.targets.size)

    @property
    def dim(self) -> int:
        return int(self.inputs.shape[1])


@dataclass(frozen=True)
class AggregationRound:
    """Round settings: ``theta`` local steps between aggregations, ``rounds`` aggregations."""

    theta: int = 1
    learning_rate: float = 0.003
    rounds: int = 1
    ridge: float = 1.0

    def __post_init__(self):
        if self.theta < 1:
            raise ValueError("theta must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge weight must be non-negative")


def _check_dims(w: np.ndarray, batch: TrainingBatch) -> None:
    if batch.dim != w.size:
        raise ValueError(f"model dimension {w.size} != batch dimension {batch.dim}")


def local_loss(model: LinearModel, batch: TrainingBatch, ridge: float = 1.0) -> float:
    w = model.weights
    _check_dims(w, batch)
    r = batch.inputs @ w - batch.targets
    if model.task == PEDESTRIAN:
        return float(r @ r)
    return float(0.5 * (r @ r) + ridge * (w @ w))


def batch_gradient(weights: np.ndarray, batch: TrainingBatch, task: int, ridge: float = 1.0) -> np.ndarray:
    """Gradient of :func:`local_loss` w.r.t. the weights (sum of per-sample gradients)."""
    w = np.asarray(weights, dtype=float)
    _check_dims(w, batch)
    X = batch.inputs
    r = X @ w - batch.targets
    if task == PEDESTRIAN:
        return 2.0 * (X.T @ r)
    return X.T @ r + 2.0 * ridge * w


def local_update(
    model: LinearModel, batch: TrainingBatch, learning_rate: float, ridge: float = 1.0
) -> LinearModel:
    if not learning_rate > 0:
        raise ValueError("learning rate must be positive")
    g = batch_gradient(model.weights, batch, model.task, ridge)
    if not np.all(np.isfinite(g)):
        raise DivergenceError("non-finite gradient in local update")
    return LinearModel(model.weights - (learning_rate / batch.sample_count) * g, model.task)


def _fsum_cols(stacked: np.ndarray) -> np.ndarray:
    # exact per-coordinate sums keep aggregation independent of participant order
    return np.array([math.fsum(col) for col in stacked.T])


def aggregate(models: Sequence[tuple[LinearModel, int]]) -> LinearModel:
    """Sample-count weighted mean of the participants' models."""
    if not models:
        raise ValueError("cannot aggregate an empty participant list")
    dims = {m.dim for m, _ in models}
    if len(dims) != 1:
        raise ValueError(f"participants disagree on dimension: {sorted(dims)}")
    total = sum(q for _, q in models)
    if total <= 0:
        raise ValueError("participant sample counts must be positive")
    weighted = _fsum_cols(np.stack([q * m.weights for m, q in models]))
    return LinearModel(weighted / total, models[0][0].task)


def global_gradient(
    weights: np.ndarray, batches: Sequence[TrainingBatch], task: int, ridge: float = 1.0
) -> np.ndarray:
    """Gradient of the global cost ``F = (1/Q) sum_i loss_i``."""
    Q = sum(b.sample_count for b in batches)
    return sum(batch_gradient(weights, b, task, ridge) for b in batches) / Q


def global_correction(
    global_model: LinearModel,
    models: Sequence[tuple[LinearModel, int]],
    batches: Sequence[TrainingBatch],
    ridge: float = 1.0,
) -> np.ndarray:
    grad = global_gradient(global_model.weights, batches, global_model.task, ridge)
    return grad - aggregate(models).weights


def global_update(global_model: LinearModel, correction, grad, learning_rate: float) -> LinearModel:
    step = np.asarray(grad, dtype=float) - np.asarray(correction, dtype=float)
    return LinearModel(global_model.weights - learning_rate * step, global_model.task)


@dataclass
class TrainResult:
    model: LinearModel
    losses: list[float] = field(default_factory=list)


def global_loss(model: LinearModel, batches: Sequence[TrainingBatch], ridge: float = 1.0) -> float:
    return sum(local_loss(model, b, ridge) for b in batches)


def train(
    participants: Sequence[TrainingBatch],
    config: AggregationRound,
    mode: Mode = "fedavg",
    task: int = REQUEST,
    init: LinearModel | None = None,
) -> TrainResult:
    """Run ``config.rounds`` aggregation rounds of ``config.theta`` local steps each.

    ``fedavg`` takes the weighted mean of the local models as the new global
    model. ``paper-faithful`` instead applies the MBS correction step
    ``beta - eta * (grad F - Theta)``.
    """
    if not participants:
        raise ValueError("training needs at least one participant")
    dims = {b.dim for b in participants}
    if len(dims) != 1:
        raise ValueError(f"participants disagree on dimension: {sorted(dims)}")
    if mode not in ("fedavg", "paper-faithful"):
        raise ValueError(f"unknown training mode {mode!r}")
    dim = dims.pop()
    beta = init if init is not None else LinearModel.zeros(dim, task)
    if beta.dim != dim:
        raise ValueError(f"initial model dimension {beta.dim} != data dimension {dim}")
    eta, ridge = config.learning_rate, config.ridge

    initial = global_loss(beta, participants, ridge)
    limit = 1e6 * max(initial, 1e-12)
    losses = [initial]
    for _ in range(config.rounds):
        locals_ = []
        for batch in participants:
            rho = beta
            for _ in range(config.theta):
                rho = local_update(rho, batch, eta, ridge)
            locals_.append((rho, batch.sample_count))
        if mode == "fedavg":
            beta = aggregate(locals_)
        else:
            grad = global_gradient(beta.weights, participants, task, ridge)
            theta_q = grad - aggregate(locals_).weights
            beta = global_update(beta, theta_q, grad, eta)
        loss = global_loss(beta, participants, ridge)
        losses.append(loss)
        if not np.isfinite(loss) or loss > limit:
            raise DivergenceError(f"loss {loss:.3g} exceeded 1e6 x initial loss {initial:.3g}")
    return TrainResult(beta, losses)
