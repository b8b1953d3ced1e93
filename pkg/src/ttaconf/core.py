"""Shared domain types, deterministic randomness, and numeric primitives.

Everything downstream (scores, calibration, weight learning, evaluation)
builds on the three operations here: a numerically stable softmax, the
split-conformal empirical quantile, and the tie-broken rank of a label
inside a probability vector.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np


class InvalidInputError(ValueError):
    """An operation received data violating its preconditions."""


class ConfigurationError(ValueError):
    """A configuration object is inconsistent or out of range."""


# ---------------------------------------------------------------------------
# Deterministic randomness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngState:
    """Value-semantic RNG descriptor: a 64-bit seed plus a named stream.

    Identical (seed, stream) pairs produce identical draw sequences on any
    platform: the Philox key is derived from sha256 of the pair, so streams
    like "calibration-u" and "test-u" never overlap.
    """

    seed: int
    stream: str = "root"

    def substream(self, *parts: object) -> "RngState":
        suffix = "/".join(str(p) for p in parts)
        return RngState(self.seed, f"{self.stream}/{suffix}")

    def generator(self) -> np.random.Generator:
        digest = hashlib.sha256(f"{self.seed}/{self.stream}".encode()).digest()
        key = np.array(
            [int.from_bytes(digest[0:8], "little"), int.from_bytes(digest[8:16], "little")],
            dtype=np.uint64,
        )
        return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


def _default_aug_names(n_augs: int) -> tuple[str, ...]:
    return ("identity",) + tuple(f"aug-{m}" for m in range(1, n_augs))


@dataclass
class LogitTensor:
    """Raw classifier logits for N examples under M augmentations of K classes.

    ``logits`` is an N x M x K float array (augmentation 0 is the identity
    view); ``labels`` holds the N true class indices.
    """

    logits: np.ndarray
    labels: np.ndarray
    aug_names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.logits.ndim != 3:
            raise InvalidInputError(
                f"logits must be N x M x K, got shape {self.logits.shape}"
            )
        n, m, k = self.logits.shape
        if n < 1 or m < 1 or k < 2:
            raise InvalidInputError(
                f"need N >= 1, M >= 1, K >= 2, got N={n}, M={m}, K={k}"
            )
        if self.labels.shape != (n,):
            raise InvalidInputError(
                f"labels must have shape ({n},), got {self.labels.shape}"
            )
        if not np.all(np.isfinite(self.logits)):
            bad = int(np.argwhere(~np.isfinite(self.logits))[0][0])
            raise InvalidInputError(f"non-finite logit at example {bad}")
        if np.any(self.labels < 0) or np.any(self.labels >= k):
            bad = int(np.argwhere((self.labels < 0) | (self.labels >= k))[0][0])
            raise InvalidInputError(
                f"label out of range [0, {k}) at example {bad}"
            )
        if not self.aug_names:
            self.aug_names = _default_aug_names(m)
        if len(self.aug_names) != m:
            raise InvalidInputError(
                f"need {m} augmentation names, got {len(self.aug_names)}"
            )

    @property
    def n_examples(self) -> int:
        return self.logits.shape[0]

    @property
    def n_augs(self) -> int:
        return self.logits.shape[1]

    @property
    def n_classes(self) -> int:
        return self.logits.shape[2]


def validate_probs(probs: np.ndarray, atol: float = 1e-6) -> np.ndarray:
    """Check a probability vector (or row-stack of them) and return it as float64."""
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < -atol) or np.any(p > 1 + atol):
        raise InvalidInputError("probabilities outside [0, 1]")
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > atol):
        raise InvalidInputError("probabilities do not sum to 1")
    return p


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis.

    Subtracting the row max keeps exp() in range for logits of any
    magnitude; the result always satisfies the probability invariants.
    """
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("softmax input must be finite")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# Slack for ceil(level * n): level arrives as integer/n, so float error is a
# few ulps, far below the 1/n spacing of legitimate fractional parts.
_CEIL_SLACK = 1e-9


def empirical_quantile(scores: np.ndarray, level: float) -> float:
    """The ceil(level * n)-th smallest score; +inf when level exceeds 1.

    This is the conservative no-interpolation order statistic of split
    conformal calibration; level > 1 corresponds to the appended {inf}
    element of the score distribution.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise InvalidInputError("scores must be a non-empty 1-d array")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("scores must be finite")
    if level <= 0:
        raise InvalidInputError(f"level must be positive, got {level}")
    n = s.size
    if level > 1:
        return math.inf
    k = math.ceil(level * n - _CEIL_SLACK)
    k = min(max(k, 1), n)
    return float(np.partition(s, k - 1)[k - 1])


def rank_of_label(probs: np.ndarray, label: int) -> int:
    """1-based rank of ``label`` in descending probability order.

    Ties resolve in favor of the lower class index, so the rank is
    deterministic for any input.
    """
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < p.shape[-1]:
        raise InvalidInputError(f"label {label} out of range for K={p.shape[-1]}")
    target = p[label]
    higher = int(np.sum(p > target))
    tied_before = int(np.sum(p[:label] == target))
    return 1 + higher + tied_before


def ranks_of_labels(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Vectorized rank_of_label over an (n, K) probability matrix."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if p.ndim != 2 or y.shape != (p.shape[0],):
        raise InvalidInputError("need (n, K) probs and (n,) labels")
    target = p[np.arange(p.shape[0]), y]
    higher = (p > target[:, None]).sum(axis=1)
    col = np.arange(p.shape[1])
    tied_before = ((p == target[:, None]) & (col[None, :] < y[:, None])).sum(axis=1)
    return (1 + higher + tied_before).astype(np.int64)
