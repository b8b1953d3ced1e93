"""Split-conformal calibration and prediction-set construction.

calibrate() turns calibration scores into the threshold q_hat; predict
functions include every class scoring strictly below it, inserting the
argmax class when that would leave a set empty. tune_raps() picks the
RAPS penalty parameters on a tuning slice so the calibration scores used
for the threshold stay untouched.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import (
    ConfigurationError,
    InvalidInputError,
    RngState,
    empirical_quantile,
    ranks_of_labels,
)
from .scores import ScoreConfig, ScoreKind, score_matrix, true_label_scores
from .tta import AugWeights

RAPS_LAMBDA_GRID = (0.001, 0.01, 0.1, 0.2, 0.5, 1.0)
RAPS_FALLBACK = {"k_reg": 5, "lam": 0.01}
MIN_TUNE_EXAMPLES = 20
TUNE_SLICE_FRACTION = 0.3


@dataclass(frozen=True)
class FittedPredictor:
    """A calibrated conformal predictor: score config, threshold, and weights."""

    score_config: ScoreConfig
    alpha: float
    q_hat: float
    aug_weights: AugWeights
    n_cal: int

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 1:
            raise ConfigurationError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.q_hat < 0:
            raise ConfigurationError(f"q_hat must be >= 0, got {self.q_hat}")


@dataclass(frozen=True)
class PredictionSet:
    """Sorted class indices of one prediction set; never empty."""

    members: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.members) == 0:
            raise InvalidInputError("prediction sets may not be empty")

    @property
    def set_size(self) -> int:
        return len(self.members)

    def contains(self, label: int) -> bool:
        return label in self.members


def calibrate(
    cal_probs: np.ndarray,
    cal_labels: np.ndarray,
    alpha: float,
    config: ScoreConfig,
    rng: RngState,
    aug_weights: AugWeights | None = None,
) -> FittedPredictor:
    """Fit q_hat as the ceil((n+1)(1-alpha))/n score quantile.

    u values come from the (seed, "calibration-u") stream; aug_weights
    records how the probabilities were produced and defaults to the
    identity-only view.
    """
    probs = np.asarray(cal_probs, dtype=np.float64)
    labels = np.asarray(cal_labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise InvalidInputError("cal_probs must be a non-empty (n, K) matrix")
    if labels.shape != (probs.shape[0],):
        raise InvalidInputError("cal_labels length must match cal_probs")
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must be in (0, 1), got {alpha}")
    n = probs.shape[0]
    if config.randomized:
        u = rng.substream("calibration-u").generator().uniform(size=n)
    else:
        u = np.zeros(n)
    scores = true_label_scores(probs, labels, u, config)
    k = math.ceil((n + 1) * (1 - alpha))
    q_hat = math.inf if k > n else empirical_quantile(scores, k / n)
    return FittedPredictor(
        score_config=config,
        alpha=alpha,
        q_hat=q_hat,
        aug_weights=aug_weights or AugWeights.identity_only(),
        n_cal=n,
    )


def _sets_from_mask(mask: np.ndarray) -> list[PredictionSet]:
    return [PredictionSet(tuple(int(c) for c in np.flatnonzero(row))) for row in mask]


def predict_set_mask(
    predictor: FittedPredictor, probs: np.ndarray, rng: RngState
) -> np.ndarray:
    """Boolean (n, K) membership matrix; the fast path behind predict_sets.

    One u per example, drawn in example order from the (seed, "test-u")
    stream; rows that would be empty get their argmax class instead.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise InvalidInputError("probs must be an (n, K) matrix")
    n = p.shape[0]
    if predictor.score_config.randomized:
        u = rng.substream("test-u").generator().uniform(size=n)
    else:
        u = np.zeros(n)
    scores = score_matrix(p, u, predictor.score_config)
    mask = scores < predictor.q_hat
    empty = ~mask.any(axis=1)
    if empty.any():
        mask[np.flatnonzero(empty), p[empty].argmax(axis=1)] = True
    return mask


def predict_sets(
    predictor: FittedPredictor, probs: np.ndarray, rng: RngState
) -> list[PredictionSet]:
    return _sets_from_mask(predict_set_mask(predictor, probs, rng))


def predict_set(
    predictor: FittedPredictor, probs: np.ndarray, rng: RngState
) -> PredictionSet:
    """Prediction set for a single probability vector."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise InvalidInputError("probs must be a length-K vector")
    return predict_sets(predictor, p[None, :], rng)[0]


def tune_raps(
    tune_probs: np.ndarray,
    tune_labels: np.ndarray,
    alpha: float,
    rng: RngState,
    randomized: bool = True,
) -> ScoreConfig:
    """Pick (k_reg, lam) on tuning data, minimizing mean set size.

    k_reg is the (1-alpha) quantile of true-label ranks plus one; lam comes
    from a fixed grid scored by an internal calibrate/predict split of the
    tuning examples, ties going to the larger (more regularized) value.
    Falls back to (k_reg=5, lam=0.01) with a warning under 20 examples.
    """
    probs = np.asarray(tune_probs, dtype=np.float64)
    labels = np.asarray(tune_labels, dtype=np.int64)
    n = probs.shape[0]
    if n < MIN_TUNE_EXAMPLES:
        warnings.warn(
            f"only {n} tuning examples (< {MIN_TUNE_EXAMPLES}); "
            f"falling back to k_reg={RAPS_FALLBACK['k_reg']}, lam={RAPS_FALLBACK['lam']}",
            stacklevel=2,
        )
        return ScoreConfig(kind=ScoreKind.RAPS, randomized=randomized, **RAPS_FALLBACK)

    ranks = ranks_of_labels(probs, labels)
    k_reg = int(empirical_quantile(ranks.astype(np.float64), 1 - alpha)) + 1

    perm = rng.substream("tune-split").generator().permutation(n)
    half = n // 2
    fit_idx, eval_idx = perm[:half], perm[half:]
    best_lam, best_size = None, math.inf
    for lam in RAPS_LAMBDA_GRID:
        config = ScoreConfig(kind=ScoreKind.RAPS, k_reg=k_reg, lam=lam, randomized=randomized)
        predictor = calibrate(
            probs[fit_idx], labels[fit_idx], alpha, config, rng.substream("tune-cal")
        )
        mask = predict_set_mask(predictor, probs[eval_idx], rng.substream("tune-pred"))
        mean_size = float(mask.sum(axis=1).mean())
        if mean_size <= best_size:
            best_lam, best_size = lam, mean_size
    return ScoreConfig(kind=ScoreKind.RAPS, k_reg=k_reg, lam=best_lam, randomized=randomized)


def fit_predictor(
    probs: np.ndarray,
    labels: np.ndarray,
    alpha: float,
    config: ScoreConfig,
    rng: RngState,
    aug_weights: AugWeights | None = None,
    auto_tune: bool = False,
) -> FittedPredictor:
    """Calibrate, optionally tuning RAPS parameters first.

    Tuning consumes the first 30% of the calibration examples; the
    threshold is then calibrated on the remaining 70% only, so tuned
    parameters never see the scores they threshold.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if auto_tune and config.kind == ScoreKind.RAPS:
        n_tune = int(round(TUNE_SLICE_FRACTION * probs.shape[0]))
        n_tune = min(max(n_tune, 1), probs.shape[0] - 1)
        config = tune_raps(
            probs[:n_tune], labels[:n_tune], alpha, rng, randomized=config.randomized
        )
        probs, labels = probs[n_tune:], labels[n_tune:]
    return calibrate(probs, labels, alpha, config, rng, aug_weights=aug_weights)


# ---------------------------------------------------------------------------
# Predictor serialization: versioned key-value text, bit-exact round trip
# ---------------------------------------------------------------------------

PREDICTOR_FORMAT = "ttaconf-predictor-v1"


def predictor_to_document(predictor: FittedPredictor) -> str:
    """Render a predictor as `key = value` lines; values are JSON literals."""
    cfg = predictor.score_config
    pairs = [
        ("format", PREDICTOR_FORMAT),
        ("kind", cfg.kind.value),
        ("randomized", cfg.randomized),
        ("k_reg", cfg.k_reg),
        ("lam", cfg.lam),
        ("alpha", predictor.alpha),
        ("q_hat", predictor.q_hat),
        ("n_cal", predictor.n_cal),
        ("aug_names", list(predictor.aug_weights.aug_names)),
        ("weights", list(predictor.aug_weights.weights)),
    ]
    return "".join(f"{key} = {json.dumps(value)}\n" for key, value in pairs)


def predictor_from_document(text: str) -> FittedPredictor:
    """Parse a predictor document; inverse of predictor_to_document."""
    fields: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidInputError(f"line {lineno}: expected `key = value`")
        key, _, value = line.partition("=")
        try:
            fields[key.strip()] = json.loads(value.strip())
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"line {lineno}: bad value ({exc})") from exc
    if fields.get("format") != PREDICTOR_FORMAT:
        raise InvalidInputError(
            f"unsupported predictor format {fields.get('format')!r}"
        )
    config = ScoreConfig(
        kind=ScoreKind(fields["kind"]),
        k_reg=fields.get("k_reg"),
        lam=fields.get("lam"),
        randomized=bool(fields["randomized"]),
    )
    weights = AugWeights(
        weights=tuple(float(w) for w in fields["weights"]),
        aug_names=tuple(str(name) for name in fields["aug_names"]),
    )
    return FittedPredictor(
        score_config=config,
        alpha=float(fields["alpha"]),
        q_hat=float(fields["q_hat"]),
        aug_weights=weights,
        n_cal=int(fields["n_cal"]),
    )
