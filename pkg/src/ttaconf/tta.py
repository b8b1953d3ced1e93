"""Test-time-augmentation aggregation and per-augmentation weight learning.

Weights theta apply to the M x K logit matrix of each example before the
softmax; they are learned by minimizing cross-entropy on a held-out slice
of the validation data so the calibration scores stay exchangeable.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .core import InvalidInputError, LogitTensor, RngState, softmax


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, theta: np.ndarray):
        super().__init__(f"non-finite training loss at epoch {epoch}")
        self.epoch = epoch
        self.theta = theta


class WeightInit(str, enum.Enum):
    UNIFORM_AVERAGE = "uniform_average"
    IDENTITY_ONLY = "identity_only"


@dataclass(frozen=True)
class AugWeights:
    """Per-augmentation aggregation weights; position 0 is the identity view."""

    weights: tuple[float, ...]
    aug_names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.aug_names):
            raise InvalidInputError("weights and aug_names must have equal length")
        if not np.all(np.isfinite(self.weights)):
            raise InvalidInputError("weights must be finite")

    @property
    def n_augs(self) -> int:
        return len(self.weights)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=np.float64)

    @classmethod
    def identity_only(cls) -> "AugWeights":
        return cls(weights=(1.0,), aug_names=("identity",))

    @classmethod
    def uniform(cls, aug_names: tuple[str, ...]) -> "AugWeights":
        m = len(aug_names)
        return cls(weights=(1.0 / m,) * m, aug_names=tuple(aug_names))

    @classmethod
    def from_array(cls, theta: np.ndarray, aug_names: tuple[str, ...]) -> "AugWeights":
        return cls(weights=tuple(float(w) for w in theta), aug_names=tuple(aug_names))

    def near_zero_mask(self, rel: float = 0.05) -> np.ndarray:
        """Flag augmentations whose weight magnitude is below rel * max |theta|."""
        theta = np.abs(self.as_array())
        return theta < rel * theta.max()


@dataclass(frozen=True)
class TtaSplit:
    """Disjoint partition of validation indices into D^(TTA) and D^(cal)."""

    beta: float
    tta_indices: np.ndarray
    cal_indices: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 50
    batch_size: int | None = None  # None = full batch
    init: WeightInit = WeightInit.UNIFORM_AVERAGE

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be positive")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")

    @classmethod
    def from_dict(cls, fields: dict) -> "TrainConfig":
        fields = dict(fields)
        if "init" in fields:
            fields["init"] = WeightInit(fields["init"])
        return cls(**fields)


@dataclass
class TrainResult:
    weights: AugWeights
    epoch_losses: np.ndarray = field(repr=False)

    @property
    def final_loss(self) -> float:
        return float(self.epoch_losses[-1])


def aggregate(example_logits: np.ndarray, theta: AugWeights) -> np.ndarray:
    """softmax of the theta-weighted sum of the M augmentation logit rows."""
    z = np.asarray(example_logits, dtype=np.float64)
    w = theta.as_array()
    if z.ndim != 2 or z.shape[0] != w.size:
        raise InvalidInputError(
            f"expected (M={w.size}, K) logits, got shape {z.shape}"
        )
    return softmax(w @ z)


def aggregate_batch(logits: np.ndarray, theta: AugWeights) -> np.ndarray:
    """aggregate over an (N, M, K) tensor, returning (N, K) probabilities."""
    z = np.asarray(logits, dtype=np.float64)
    w = theta.as_array()
    if z.ndim != 3 or z.shape[1] != w.size:
        raise InvalidInputError(
            f"expected (N, M={w.size}, K) logits, got shape {z.shape}"
        )
    return softmax(np.einsum("m,nmk->nk", w, z))


def tta_average(example_logits: np.ndarray) -> np.ndarray:
    """Uniform-weight aggregation: softmax of the mean logit row."""
    z = np.asarray(example_logits, dtype=np.float64)
    if z.ndim != 2:
        raise InvalidInputError(f"expected (M, K) logits, got shape {z.shape}")
    return softmax(z.mean(axis=0))


def tta_average_batch(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 3:
        raise InvalidInputError(f"expected (N, M, K) logits, got shape {z.shape}")
    return softmax(z.mean(axis=1))


def split_validation(n_val: int, beta: float, rng: RngState) -> TtaSplit:
    """Random disjoint split of n_val indices, ~beta of them to D^(TTA).

    Sizes round to nearest but both sides stay non-empty.
    """
    if not 0 < beta < 1:
        raise InvalidInputError(f"beta must be in (0, 1), got {beta}")
    if n_val < 2:
        raise InvalidInputError(f"need n_val >= 2 to split, got {n_val}")
    n_tta = int(round(beta * n_val))
    n_tta = min(max(n_tta, 1), n_val - 1)
    perm = rng.substream("split").generator().permutation(n_val)
    return TtaSplit(
        beta=beta,
        tta_indices=np.sort(perm[:n_tta]),
        cal_indices=np.sort(perm[n_tta:]),
    )


def cross_entropy_and_grad(
    theta: np.ndarray, logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of aggregate(logits, theta) and its closed-form gradient.

    dL/dtheta_m = mean over the batch of (p - onehot(y)) . z_m, with p the
    aggregated softmax output and z_m augmentation m's logit row.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n = z.shape[0]
    # no finite-input guard here: a non-finite loss must surface to the
    # divergence check in train_weights instead of raising mid-gradient
    with np.errstate(invalid="ignore", over="ignore"):
        combined = np.einsum("m,nmk->nk", theta, z)
        shifted = combined - combined.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        log_z = np.log(e.sum(axis=1))
        loss = float(np.mean(log_z - shifted[np.arange(n), y]))
        p = e / e.sum(axis=1, keepdims=True)
        p[np.arange(n), y] -= 1.0
        grad = np.einsum("nk,nmk->m", p, z) / n
    return loss, grad


def train_weights(
    tensor: LogitTensor,
    tta_indices: np.ndarray,
    config: TrainConfig = TrainConfig(),
    rng: RngState = RngState(0),
) -> TrainResult:
    """Learn theta by SGD with momentum and weight decay on D^(TTA).

    Reads only the rows in tta_indices; epoch_losses[e] is the mean
    cross-entropy over the whole split at the start of epoch e, with the
    post-training loss appended last.
    """
    idx = np.asarray(tta_indices, dtype=np.int64)
    if idx.size == 0:
        raise InvalidInputError("tta_indices must be non-empty")
    z = tensor.logits[idx]
    y = tensor.labels[idx]
    m = tensor.n_augs

    if config.init == WeightInit.IDENTITY_ONLY:
        theta = np.zeros(m)
        theta[0] = 1.0
    else:
        theta = np.full(m, 1.0 / m)

    n = idx.size
    batch = n if config.batch_size is None else min(config.batch_size, n)
    shuffle_gen = rng.substream("sgd-shuffle").generator()
    velocity = np.zeros(m)
    losses = []

    for epoch in range(config.epochs):
        full_loss, _ = cross_entropy_and_grad(theta, z, y)
        if not np.isfinite(full_loss):
            raise TrainingDivergedError(epoch, theta)
        losses.append(full_loss)
        order = shuffle_gen.permutation(n) if batch < n else np.arange(n)
        for start in range(0, n, batch):
            take = order[start : start + batch]
            _, grad = cross_entropy_and_grad(theta, z[take], y[take])
            # overflow here shows up as a non-finite loss next epoch
            with np.errstate(invalid="ignore", over="ignore"):
                grad = grad + config.weight_decay * theta
                velocity = config.momentum * velocity + grad
                theta = theta - config.learning_rate * velocity

    final_loss, _ = cross_entropy_and_grad(theta, z, y)
    if not np.isfinite(final_loss):
        raise TrainingDivergedError(config.epochs, theta)
    losses.append(final_loss)
    return TrainResult(
        weights=AugWeights.from_array(theta, tensor.aug_names),
        epoch_losses=np.asarray(losses),
    )
