"""Coverage, efficiency, and adaptivity metrics plus significance tests.

The p-values here come from a self-contained regularized incomplete beta
(Lentz continued fraction, ~1e-10 accurate), so the package carries no
stats-library dependency; tests cross-check it against scipy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import InvalidInputError, ranks_of_labels
from .calibrator import PredictionSet


class DegenerateTestError(ValueError):
    """Paired differences have zero variance; the t statistic is undefined."""


class UndefinedCorrelationError(ValueError):
    """A correlation input is constant."""


# ---------------------------------------------------------------------------
# t-distribution tail via the regularized incomplete beta function
# ---------------------------------------------------------------------------

_CF_MAX_ITER = 300
_CF_EPS = 3e-16
_CF_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    # Lentz's algorithm for the continued fraction of I_x(a, b).
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta failed to converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), the CDF of Beta(a, b) at x."""
    if a <= 0 or b <= 0:
        raise InvalidInputError("beta parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: int) -> float:
    """P(|T_df| >= |t|) via the identity with I_x(df/2, 1/2)."""
    if df < 1:
        raise InvalidInputError(f"df must be >= 1, got {df}")
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


# ---------------------------------------------------------------------------
# Prediction-set metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SscvBins:
    """Fixed set-size bins for size-stratified coverage violation."""

    edges: tuple[tuple[int, float], ...] = (
        (0, 1),
        (2, 3),
        (4, 10),
        (11, 100),
        (101, math.inf),
    )

    def bin_index(self, size: int) -> int:
        for j, (lo, hi) in enumerate(self.edges):
            if lo <= size <= hi:
                return j
        raise InvalidInputError(f"set size {size} falls in no bin")


DEFAULT_SSCV_BINS = SscvBins()


def _sizes_and_covered(
    sets: list[PredictionSet], labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(labels, dtype=np.int64)
    if len(sets) == 0 or y.shape != (len(sets),):
        raise InvalidInputError("sets and labels must be non-empty and equal length")
    sizes = np.array([s.set_size for s in sets], dtype=np.int64)
    covered = np.array([s.contains(int(label)) for s, label in zip(sets, y)])
    return sizes, covered


def coverage(sets: list[PredictionSet], labels: np.ndarray) -> float:
    """Fraction of sets containing their true label."""
    _, covered = _sizes_and_covered(sets, labels)
    return float(covered.mean())


def sscv(
    sets: list[PredictionSet],
    labels: np.ndarray,
    alpha: float,
    bins: SscvBins = DEFAULT_SSCV_BINS,
) -> float:
    """Max over non-empty size bins of |(1 - alpha) - coverage within bin|."""
    sizes, covered = _sizes_and_covered(sets, labels)
    bin_idx = np.array([bins.bin_index(int(s)) for s in sizes])
    worst = None
    for j in range(len(bins.edges)):
        in_bin = bin_idx == j
        if not in_bin.any():
            continue
        gap = abs((1.0 - alpha) - float(covered[in_bin].mean()))
        worst = gap if worst is None else max(worst, gap)
    if worst is None:
        raise InvalidInputError("all SSCV bins are empty")
    return worst


def optimal_top_k(probs: np.ndarray, labels: np.ndarray, alpha: float) -> int:
    """Smallest k whose top-k sets reach coverage 1 - alpha; K if none do."""
    ranks = ranks_of_labels(probs, labels)
    n, k_max = probs.shape
    counts = np.bincount(ranks, minlength=k_max + 1)[1 : k_max + 1]
    cum_frac = np.cumsum(counts) / n
    hit = np.flatnonzero(cum_frac + 1e-12 >= 1.0 - alpha)
    return int(hit[0]) + 1 if hit.size else k_max


@dataclass(frozen=True)
class RankShiftBin:
    lo: float
    hi: float
    count: int
    mean_base: float
    mean_tta: float
    std_base: float
    std_tta: float


def rank_shift_bins(
    base_probs: np.ndarray,
    tta_probs: np.ndarray,
    labels: np.ndarray,
    n_bins: int = 5,
) -> list[RankShiftBin]:
    """Per-bin true-class rank stats, base vs TTA-transformed probabilities.

    Examples are assigned to n_bins equal-width bins of base rank over
    [1, max observed base rank]; empty bins are reported with count 0.
    """
    base = np.asarray(base_probs, dtype=np.float64)
    tta = np.asarray(tta_probs, dtype=np.float64)
    if base.shape != tta.shape:
        raise InvalidInputError("base and tta probability shapes must match")
    base_ranks = ranks_of_labels(base, labels).astype(np.float64)
    tta_ranks = ranks_of_labels(tta, labels).astype(np.float64)
    lo, hi = 1.0, float(base_ranks.max())
    width = (hi - lo) / n_bins
    if width > 0:
        idx = np.clip(((base_ranks - lo) / width).astype(int), 0, n_bins - 1)
    else:
        idx = np.zeros(base_ranks.size, dtype=int)
    out = []
    for j in range(n_bins):
        in_bin = idx == j
        count = int(in_bin.sum())
        if count:
            stats = (
                float(base_ranks[in_bin].mean()),
                float(tta_ranks[in_bin].mean()),
                float(base_ranks[in_bin].std()),
                float(tta_ranks[in_bin].std()),
            )
        else:
            stats = (math.nan,) * 4
        out.append(RankShiftBin(lo + j * width, lo + (j + 1) * width, count, *stats))
    return out


@dataclass(frozen=True)
class ClassSizeStats:
    """Per-class mean set sizes; absent classes carry NaN, not zero."""

    mean_sizes: np.ndarray
    counts: np.ndarray

    @property
    def present(self) -> np.ndarray:
        return self.counts > 0


def class_conditional_sizes(
    sets: list[PredictionSet], labels: np.ndarray, n_classes: int
) -> ClassSizeStats:
    sizes, _ = _sizes_and_covered(sets, labels)
    y = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(y, minlength=n_classes)
    totals = np.bincount(y, weights=sizes.astype(np.float64), minlength=n_classes)
    with np.errstate(invalid="ignore"):
        means = np.where(counts > 0, totals / np.maximum(counts, 1), math.nan)
    return ClassSizeStats(mean_sizes=means, counts=counts)


# ---------------------------------------------------------------------------
# Significance tests
# ---------------------------------------------------------------------------


def pearson_r(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Sample Pearson correlation and two-sided p (t distribution, n-2 df)."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1 or xa.size < 3:
        raise InvalidInputError("need two equal-length 1-d arrays with n >= 3")
    xd = xa - xa.mean()
    yd = ya - ya.mean()
    sx = math.sqrt(float(xd @ xd))
    sy = math.sqrt(float(yd @ yd))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for constant input")
    r = float(xd @ yd) / (sx * sy)
    r = max(-1.0, min(1.0, r))
    n = xa.size
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return r, t_two_sided_p(t, n - 2)


@dataclass(frozen=True)
class TTestResult:
    t: float
    p_raw: float
    p_adjusted: float
    significant: bool


def paired_t_test(a: np.ndarray, b: np.ndarray, n_comparisons: int = 1) -> TTestResult:
    """Paired t test on a - b with a Bonferroni-adjusted p-value.

    significance is judged at 0.05 on the adjusted p.
    """
    aa = np.asarray(a, dtype=np.float64)
    ba = np.asarray(b, dtype=np.float64)
    if aa.shape != ba.shape or aa.ndim != 1 or aa.size < 2:
        raise InvalidInputError("need two equal-length 1-d arrays with n >= 2")
    if n_comparisons < 1:
        raise InvalidInputError("n_comparisons must be >= 1")
    d = aa - ba
    if np.ptp(d) == 0.0:
        raise DegenerateTestError("paired differences have zero variance")
    n = d.size
    sd = float(d.std(ddof=1))
    t = float(d.mean()) / (sd / math.sqrt(n))
    p_raw = t_two_sided_p(t, n - 1)
    p_adjusted = min(1.0, p_raw * n_comparisons)
    return TTestResult(t=t, p_raw=p_raw, p_adjusted=p_adjusted, significant=p_adjusted < 0.05)


# ---------------------------------------------------------------------------
# Aggregate report
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    coverage: float
    avg_set_size: float
    sscv: float
    class_sizes: np.ndarray = field(repr=False)
    per_example_sizes: np.ndarray = field(repr=False)
    n_test: int

    def to_dict(self) -> dict:
        return {
            "coverage": self.coverage,
            "avg_set_size": self.avg_set_size,
            "sscv": self.sscv,
            "n_test": self.n_test,
            "class_sizes": [None if math.isnan(v) else v for v in self.class_sizes],
        }


def evaluate_sets(
    sets: list[PredictionSet],
    labels: np.ndarray,
    alpha: float,
    n_classes: int,
    bins: SscvBins = DEFAULT_SSCV_BINS,
) -> EvalReport:
    """Bundle the standard metrics for one method on one test split."""
    sizes, covered = _sizes_and_covered(sets, labels)
    stats = class_conditional_sizes(sets, labels, n_classes)
    return EvalReport(
        coverage=float(covered.mean()),
        avg_set_size=float(sizes.mean()),
        sscv=sscv(sets, labels, alpha, bins),
        class_sizes=stats.mean_sizes,
        per_example_sizes=sizes,
        n_test=len(sets),
    )
