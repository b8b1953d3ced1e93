"""Conformal score functions: APS and its rank-penalized RAPS variant.

The score of (x, y) is the probability mass ranked above y plus a
randomized share u * p(y) of y's own mass; RAPS adds lambda * max(0,
rank(y) - k_reg) to push low-rank classes out of prediction sets.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import ConfigurationError, InvalidInputError, rank_of_label


class ScoreKind(str, enum.Enum):
    APS = "aps"
    RAPS = "raps"


@dataclass(frozen=True)
class ScoreConfig:
    """Which conformal score to use, plus the RAPS penalty parameters.

    ``randomized`` controls whether the u * p(y) term is drawn from U(0,1)
    or fixed at zero (deterministic scores).
    """

    kind: ScoreKind = ScoreKind.APS
    k_reg: int | None = None
    lam: float | None = None
    randomized: bool = True

    def __post_init__(self) -> None:
        if self.kind == ScoreKind.RAPS:
            if self.k_reg is None or self.lam is None:
                raise ConfigurationError("RAPS requires k_reg and lam")
            if self.k_reg < 0:
                raise ConfigurationError(f"k_reg must be >= 0, got {self.k_reg}")
            if self.lam < 0:
                raise ConfigurationError(f"lam must be >= 0, got {self.lam}")
        else:
            if self.k_reg is not None or self.lam is not None:
                raise ConfigurationError("k_reg/lam are RAPS-only fields")


def aps_score(probs: np.ndarray, label: int, u: float) -> float:
    """APS score: mass of classes with strictly higher probability, plus u * p(label)."""
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < p.size:
        raise InvalidInputError(f"label {label} out of range")
    if not 0 <= u <= 1:
        raise InvalidInputError(f"u must be in [0, 1], got {u}")
    rho = float(p[p > p[label]].sum())
    return rho + u * float(p[label])


def raps_score(probs: np.ndarray, label: int, u: float, config: ScoreConfig) -> float:
    """APS score plus the rank penalty lam * max(0, rank(label) - k_reg)."""
    if config.kind != ScoreKind.RAPS:
        raise ConfigurationError("raps_score requires a RAPS config")
    rank = rank_of_label(probs, label)
    penalty = config.lam * max(0, rank - config.k_reg)
    return aps_score(probs, label, u) + penalty


def score_all_classes(probs: np.ndarray, u: float, config: ScoreConfig) -> np.ndarray:
    """Scores of every class for one example, sharing a single u.

    Classes are ordered by descending probability with lower index first on
    ties; each class's cumulative term is the mass strictly before it in
    that order, so prediction sets are always prefixes of the order.
    """
    p = np.asarray(probs, dtype=np.float64)
    return score_matrix(p[None, :], np.array([u], dtype=np.float64), config)[0]


def score_matrix(probs: np.ndarray, u: np.ndarray, config: ScoreConfig) -> np.ndarray:
    """score_all_classes over an (n, K) matrix with per-example u values."""
    p = np.asarray(probs, dtype=np.float64)
    uu = np.asarray(u, dtype=np.float64)
    if p.ndim != 2 or uu.shape != (p.shape[0],):
        raise InvalidInputError("need (n, K) probs and (n,) u")
    n, k = p.shape
    # argsort on -p is stable, so equal probabilities keep index order.
    order = np.argsort(-p, axis=1, kind="stable")
    sorted_p = np.take_along_axis(p, order, axis=1)
    cum_before = np.cumsum(sorted_p, axis=1) - sorted_p
    scores_sorted = cum_before + uu[:, None] * sorted_p
    if config.kind == ScoreKind.RAPS:
        ranks = np.arange(1, k + 1, dtype=np.float64)
        scores_sorted = scores_sorted + config.lam * np.maximum(0.0, ranks - config.k_reg)
    scores = np.empty_like(scores_sorted)
    np.put_along_axis(scores, order, scores_sorted, axis=1)
    return scores


def true_label_scores(
    probs: np.ndarray, labels: np.ndarray, u: np.ndarray, config: ScoreConfig
) -> np.ndarray:
    """Per-example score of the true label, the calibration-side quantity."""
    y = np.asarray(labels, dtype=np.int64)
    scores = score_matrix(probs, u, config)
    return scores[np.arange(scores.shape[0]), y]
