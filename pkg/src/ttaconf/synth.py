"""Synthetic exchangeable logit generator and Monte Carlo coverage trials.

Each augmentation's logit row is a scaled one-hot of the true label plus
Gaussian noise, so informativeness is one dial per augmentation:
signal 0 gives pure noise, independent noise across augmentations gives
the classical regime where averaging must help.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .core import InvalidInputError, LogitTensor, RngState, softmax
from .calibrator import calibrate, predict_set_mask
from .scores import ScoreConfig
from .tta import TrainConfig, aggregate_batch, split_validation, train_weights, tta_average_batch


class TtaMode(str, enum.Enum):
    NONE = "none"
    AVG = "avg"
    LEARNED = "learned"


@dataclass(frozen=True)
class SynthConfig:
    n_examples: int = 2000
    n_classes: int = 10
    n_augs: int = 4
    signal_strength: tuple[float, ...] | float = 1.0
    noise_scale: tuple[float, ...] | float = 1.0
    label_weights: tuple[float, ...] | None = None  # None = uniform
    separation: float = 4.0  # logit gap per unit signal
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.n_examples, self.n_classes, self.n_augs) < 1:
            raise InvalidInputError("counts must be positive")
        if np.any(np.asarray(self.signal_strength) < 0):
            raise InvalidInputError("signal_strength must be non-negative")
        if np.any(np.asarray(self.noise_scale) < 0):
            raise InvalidInputError("noise_scale must be non-negative")
        self.per_aug(self.signal_strength)
        self.per_aug(self.noise_scale)
        if self.label_weights is not None and len(self.label_weights) != self.n_classes:
            raise InvalidInputError(
                f"label_weights needs {self.n_classes} entries, got {len(self.label_weights)}"
            )

    def per_aug(self, value: tuple[float, ...] | float) -> np.ndarray:
        try:
            arr = np.broadcast_to(np.asarray(value, dtype=np.float64), (self.n_augs,))
        except ValueError as exc:
            raise InvalidInputError(
                f"per-augmentation values need length 1 or {self.n_augs}"
            ) from exc
        return arr.astype(np.float64)


def generate(config: SynthConfig) -> LogitTensor:
    """Draw an i.i.d. (hence exchangeable) synthetic logit tensor."""
    n, m, k = config.n_examples, config.n_augs, config.n_classes
    gen = RngState(config.seed, "synth").generator()
    if config.label_weights is None:
        labels = gen.integers(0, k, size=n)
    else:
        w = np.asarray(config.label_weights, dtype=np.float64)
        labels = gen.choice(k, size=n, p=w / w.sum())
    signal = config.per_aug(config.signal_strength) * config.separation
    noise = config.per_aug(config.noise_scale)
    logits = gen.standard_normal((n, m, k)) * noise[None, :, None]
    logits[np.arange(n), :, labels] += signal[None, :]
    return LogitTensor(logits=logits, labels=labels)


def method_probs(
    tensor: LogitTensor,
    mode: TtaMode,
    indices: np.ndarray,
    theta=None,
) -> np.ndarray:
    """Probabilities for the given rows under one aggregation mode."""
    z = tensor.logits[np.asarray(indices, dtype=np.int64)]
    if mode == TtaMode.NONE:
        return softmax(z[:, 0, :])
    if mode == TtaMode.AVG:
        return tta_average_batch(z)
    if theta is None:
        raise InvalidInputError("learned mode requires trained weights")
    return aggregate_batch(z, theta)


def coverage_trial(
    config: SynthConfig,
    alpha: float,
    score_config: ScoreConfig,
    use_tta: TtaMode,
    n_trials: int,
    rng: RngState,
    beta: float = 0.2,
    val_fraction: float = 0.5,
    train_config: TrainConfig = TrainConfig(),
) -> np.ndarray:
    """Coverage of the full pipeline over n_trials fresh draws.

    Each trial generates new data, splits it into validation/test, carves
    D^(TTA) out of validation, optionally trains weights there, calibrates
    on D^(cal), and measures test coverage. Per-trial randomness comes from
    ("trial", t) substreams, so trial t is reproducible in isolation.
    """
    if n_trials < 1:
        raise InvalidInputError("n_trials must be >= 1")
    if not 0 < val_fraction < 1:
        raise InvalidInputError("val_fraction must be in (0, 1)")
    coverages = np.empty(n_trials)
    for t in range(n_trials):
        trial_rng = rng.substream("trial", t)
        data_seed = int(trial_rng.substream("data").generator().integers(2**63))
        tensor = generate(replace(config, seed=data_seed))
        n = tensor.n_examples
        perm = trial_rng.substream("valtest").generator().permutation(n)
        n_val = int(round(val_fraction * n))
        val_idx, test_idx = perm[:n_val], perm[n_val:]

        split = split_validation(n_val, beta, trial_rng)
        tta_idx = val_idx[split.tta_indices]
        cal_idx = val_idx[split.cal_indices]

        theta = None
        if use_tta == TtaMode.LEARNED:
            theta = train_weights(tensor, tta_idx, train_config, trial_rng).weights
        cal_probs = method_probs(tensor, use_tta, cal_idx, theta)
        test_probs = method_probs(tensor, use_tta, test_idx, theta)

        predictor = calibrate(
            cal_probs, tensor.labels[cal_idx], alpha, score_config, trial_rng
        )
        mask = predict_set_mask(predictor, test_probs, trial_rng)
        test_labels = tensor.labels[test_idx]
        coverages[t] = mask[np.arange(test_idx.size), test_labels].mean()
    return coverages
