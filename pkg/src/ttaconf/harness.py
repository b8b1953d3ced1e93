"""Experiment orchestration: the repeated-split protocol behind the CLI.

One split: permute examples, halve into validation/test, carve D^(TTA)
out of validation, train weights if requested, calibrate every method on
the identical D^(cal), evaluate on the identical test half. Aggregation
reports mean +/- std over splits plus Bonferroni-corrected paired t-tests.
"""

from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .core import ConfigurationError, LogitTensor, RngState
from .calibrator import FittedPredictor, fit_predictor, predict_sets
from .evaluation import (
    DegenerateTestError,
    EvalReport,
    evaluate_sets,
    optimal_top_k,
    paired_t_test,
    pearson_r,
    rank_shift_bins,
)
from .io import dump_kv, parse_kv, read_tensor
from .scores import ScoreConfig, ScoreKind
from .synth import SynthConfig, TtaMode, coverage_trial, method_probs
from .tta import TrainConfig, split_validation, train_weights

PLAN_FORMAT = "ttaconf-experiment-v1"


class Method(str, enum.Enum):
    BASELINE = "baseline"
    TTA_AVG = "tta_avg"
    TTA_LEARNED = "tta_learned"

    @property
    def tta_mode(self) -> TtaMode:
        return {
            Method.BASELINE: TtaMode.NONE,
            Method.TTA_AVG: TtaMode.AVG,
            Method.TTA_LEARNED: TtaMode.LEARNED,
        }[self]


METHOD_ORDER = (Method.BASELINE, Method.TTA_AVG, Method.TTA_LEARNED)


@dataclass(frozen=True)
class ExperimentPlan:
    tensor_path: str
    alphas: tuple[float, ...] = (0.1,)
    score: ScoreKind = ScoreKind.RAPS
    k_reg: int | None = None  # None = auto-tune (RAPS)
    lam: float | None = None
    randomized: bool = True
    methods: tuple[Method, ...] = METHOD_ORDER
    beta: float = 0.2
    n_splits: int = 10
    seed: int = 0
    output_dir: str | None = None  # consumed by clients, not the computation
    val_downsample: float = 1.0  # calibration-set-size sweep knob
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self) -> None:
        if not self.alphas or any(not 0 < a < 1 for a in self.alphas):
            raise ConfigurationError("alphas must be a non-empty subset of (0, 1)")
        if self.n_splits < 1:
            raise ConfigurationError("n_splits must be >= 1")
        if not self.methods:
            raise ConfigurationError("at least one method is required")
        if not 0 < self.val_downsample <= 1:
            raise ConfigurationError("val_downsample must be in (0, 1]")

    def ordered_methods(self) -> tuple[Method, ...]:
        return tuple(m for m in METHOD_ORDER if m in self.methods)

    def score_config(self) -> tuple[ScoreConfig, bool]:
        """Score config plus whether RAPS parameters still need tuning."""
        if self.score == ScoreKind.RAPS:
            if self.k_reg is None or self.lam is None:
                # placeholder parameters; fit_predictor replaces them per split
                return (
                    ScoreConfig(ScoreKind.RAPS, k_reg=1, lam=0.0, randomized=self.randomized),
                    True,
                )
            return (
                ScoreConfig(
                    ScoreKind.RAPS, k_reg=self.k_reg, lam=self.lam, randomized=self.randomized
                ),
                False,
            )
        return ScoreConfig(ScoreKind.APS, randomized=self.randomized), False

    def to_fields(self) -> dict:
        fields = {
            "tensor_path": self.tensor_path,
            "alphas": list(self.alphas),
            "score": self.score.value,
            "k_reg": self.k_reg,
            "lam": self.lam,
            "randomized": self.randomized,
            "methods": [m.value for m in self.ordered_methods()],
            "beta": self.beta,
            "n_splits": self.n_splits,
            "seed": self.seed,
            "val_downsample": self.val_downsample,
        }
        if self.output_dir is not None:
            fields["output_dir"] = self.output_dir
        if self.train != TrainConfig():
            fields["train"] = {k: (v.value if isinstance(v, enum.Enum) else v)
                               for k, v in asdict(self.train).items()}
        return fields


def plan_to_document(plan: ExperimentPlan) -> str:
    return dump_kv(plan.to_fields(), PLAN_FORMAT)


def plan_from_document(text: str) -> ExperimentPlan:
    fields = parse_kv(text, PLAN_FORMAT)
    if "train" in fields:
        fields["train"] = TrainConfig.from_dict(fields["train"])
    fields["alphas"] = tuple(fields.get("alphas", [0.1]))
    fields["methods"] = tuple(Method(m) for m in fields.get("methods", []))
    fields["score"] = ScoreKind(fields.get("score", "raps"))
    return ExperimentPlan(**fields)


# ---------------------------------------------------------------------------
# One split of the experimental protocol
# ---------------------------------------------------------------------------


@dataclass
class SplitData:
    """Index layout and per-method probabilities for one split."""

    rng: RngState
    cal_idx: np.ndarray
    test_idx: np.ndarray
    cal_probs: dict[Method, np.ndarray]
    test_probs: dict[Method, np.ndarray]
    theta: object  # AugWeights | None


def prepare_split(tensor: LogitTensor, plan: ExperimentPlan, split_i: int) -> SplitData:
    rng = RngState(plan.seed).substream("split", split_i)
    n = tensor.n_examples
    perm = rng.substream("valtest").generator().permutation(n)
    n_half = n // 2
    val_idx, test_idx = perm[:n_half], perm[n_half : 2 * n_half]
    if plan.val_downsample < 1.0:
        keep = max(2, int(round(plan.val_downsample * n_half)))
        val_idx = val_idx[:keep]

    split = split_validation(val_idx.size, plan.beta, rng)
    tta_idx = val_idx[split.tta_indices]
    cal_idx = val_idx[split.cal_indices]

    methods = plan.ordered_methods()
    theta = None
    if Method.TTA_LEARNED in methods:
        theta = train_weights(tensor, tta_idx, plan.train, rng).weights

    cal_probs = {m: method_probs(tensor, m.tta_mode, cal_idx, theta) for m in methods}
    test_probs = {m: method_probs(tensor, m.tta_mode, test_idx, theta) for m in methods}
    return SplitData(
        rng=rng,
        cal_idx=cal_idx,
        test_idx=test_idx,
        cal_probs=cal_probs,
        test_probs=test_probs,
        theta=theta,
    )


def fit_split_predictor(
    tensor: LogitTensor,
    data: SplitData,
    plan: ExperimentPlan,
    method: Method,
    alpha: float,
) -> FittedPredictor:
    config, needs_tuning = plan.score_config()
    return fit_predictor(
        data.cal_probs[method],
        tensor.labels[data.cal_idx],
        alpha,
        config,
        data.rng,
        aug_weights=data.theta if method == Method.TTA_LEARNED else None,
        auto_tune=needs_tuning,
    )


# ---------------------------------------------------------------------------
# cmd_run: the repeated-split table
# ---------------------------------------------------------------------------


def run_experiment(
    plan: ExperimentPlan, tensor: LogitTensor | None = None, max_workers: int = 1
) -> dict:
    """Execute the full protocol and return the aggregate report.

    Splits are independent (per-split rng substreams, no shared state), so
    max_workers > 1 runs them in a thread pool; results are assembled in
    split order either way, keeping the report byte-identical.
    """
    if tensor is None:
        tensor = read_tensor(plan.tensor_path)
    methods = plan.ordered_methods()

    def one_split(i: int) -> dict[tuple[float, Method], EvalReport]:
        data = prepare_split(tensor, plan, i)
        test_labels = tensor.labels[data.test_idx]
        out = {}
        for alpha in plan.alphas:
            for method in methods:
                predictor = fit_split_predictor(tensor, data, plan, method, alpha)
                sets = predict_sets(predictor, data.test_probs[method], data.rng)
                out[(alpha, method)] = evaluate_sets(
                    sets, test_labels, alpha, tensor.n_classes
                )
        return out

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            split_results = list(pool.map(one_split, range(plan.n_splits)))
    else:
        split_results = [one_split(i) for i in range(plan.n_splits)]

    per_split: dict[tuple[float, Method], list[EvalReport]] = {
        (a, m): [] for a in plan.alphas for m in methods
    }
    for result in split_results:
        for key, report in result.items():
            per_split[key].append(report)

    cells = []
    for alpha in plan.alphas:
        for method in methods:
            reports = per_split[(alpha, method)]
            sizes = [r.avg_set_size for r in reports]
            covs = [r.coverage for r in reports]
            sscvs = [r.sscv for r in reports]
            cells.append(
                {
                    "alpha": alpha,
                    "method": method.value,
                    "mean_set_size": float(np.mean(sizes)),
                    "std_set_size": float(np.std(sizes)) if plan.n_splits > 1 else None,
                    "mean_coverage": float(np.mean(covs)),
                    "std_coverage": float(np.std(covs)) if plan.n_splits > 1 else None,
                    "mean_sscv": float(np.mean(sscvs)),
                    "std_sscv": float(np.std(sscvs)) if plan.n_splits > 1 else None,
                    "per_split_set_size": [float(s) for s in sizes],
                    "per_split_coverage": [float(c) for c in covs],
                }
            )

    notes = []
    comparisons = []
    if plan.n_splits < 2:
        notes.append("t-tests skipped: need at least 2 splits")
    else:
        comparisons = _compare_methods(per_split, plan.alphas, methods)

    report = {
        "format": "ttaconf-report-v1",
        "plan": plan.to_fields(),
        "tensor": {
            "n_examples": tensor.n_examples,
            "n_augs": tensor.n_augs,
            "n_classes": tensor.n_classes,
            "aug_names": list(tensor.aug_names),
        },
        "cells": cells,
        "comparisons": comparisons,
        "notes": notes,
    }
    return report


def _compare_methods(per_split, alphas, methods) -> list[dict]:
    """Paired t-tests of each method against baseline and the per-cell best."""
    out = []
    for alpha in alphas:
        sizes = {
            m: np.array([r.avg_set_size for r in per_split[(alpha, m)]]) for m in methods
        }
        best = min(methods, key=lambda m: sizes[m].mean())
        pairs = []
        if Method.BASELINE in methods:
            pairs += [
                (m, Method.BASELINE, "baseline")
                for m in methods
                if m != Method.BASELINE
            ]
        pairs += [(m, best, "best") for m in methods if m != best]
        n_comparisons = len(pairs)
        for method, reference, ref_label in pairs:
            try:
                result = paired_t_test(sizes[method], sizes[reference], n_comparisons)
                entry = {
                    "t": result.t,
                    "p_raw": result.p_raw,
                    "p_adjusted": result.p_adjusted,
                    "significant": result.significant,
                }
            except DegenerateTestError:
                entry = {"t": None, "p_raw": None, "p_adjusted": None, "significant": False,
                         "note": "degenerate: zero-variance differences"}
            out.append(
                {
                    "alpha": alpha,
                    "method": method.value,
                    "reference": reference.value,
                    "reference_role": ref_label,
                    "n_comparisons": n_comparisons,
                    **entry,
                }
            )
    return out


# ---------------------------------------------------------------------------
# cmd_simulate: Monte Carlo coverage over synthetic data
# ---------------------------------------------------------------------------


def simulate(
    config: SynthConfig,
    alpha: float,
    score_config: ScoreConfig,
    use_tta: TtaMode,
    n_trials: int,
    seed: int,
    beta: float = 0.2,
    val_fraction: float = 0.5,
    histogram_bins: int = 20,
) -> dict:
    """Run coverage trials and summarize against the guarantee band."""
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must be in (0, 1), got {alpha}")
    coverages = coverage_trial(
        config,
        alpha,
        score_config,
        use_tta,
        n_trials,
        RngState(seed, "simulate"),
        beta=beta,
        val_fraction=val_fraction,
    )
    n_val = int(round(val_fraction * config.n_examples))
    n_cal = n_val - int(round(beta * n_val))
    counts, edges = np.histogram(coverages, bins=histogram_bins, range=(0.0, 1.0))
    hist_rows = ["bin_lo,bin_hi,count"] + [
        f"{edges[i]:.6f},{edges[i + 1]:.6f},{int(c)}" for i, c in enumerate(counts)
    ]
    return {
        "alpha": alpha,
        "n_trials": n_trials,
        "use_tta": use_tta.value,
        "mean_coverage": float(coverages.mean()),
        "std_coverage": float(coverages.std()),
        "stderr": float(coverages.std() / math.sqrt(n_trials)),
        "guarantee_band": [1 - alpha, 1 - alpha + 1.0 / (n_cal + 1)],
        "n_cal": n_cal,
        "coverages": [float(c) for c in coverages],
        "histogram_csv": "\n".join(hist_rows) + "\n",
    }


# ---------------------------------------------------------------------------
# cmd_analyze: rank shift, optimal top-k, class-conditional tables
# ---------------------------------------------------------------------------


def analyze(plan: ExperimentPlan, alpha: float, tensor: LogitTensor | None = None) -> dict:
    """Per-seed adaptivity analyses; returns data series plus rendered CSV."""
    if tensor is None:
        tensor = read_tensor(plan.tensor_path)
    methods = plan.ordered_methods()
    if not methods:
        raise ConfigurationError("at least one method is required")
    k = tensor.n_classes

    topk_rows = []
    shift_rows = []
    class_acc = {m: np.zeros(k) for m in methods}
    class_sizes: dict[Method, list[np.ndarray]] = {m: [] for m in methods}
    class_counts = np.zeros(k)

    for i in range(plan.n_splits):
        data = prepare_split(tensor, plan, i)
        test_labels = tensor.labels[data.test_idx]
        cal_labels = tensor.labels[data.cal_idx]
        for method in methods:
            topk_rows.append(
                {
                    "seed": i,
                    "method": method.value,
                    "alpha": alpha,
                    "optimal_top_k": optimal_top_k(
                        data.test_probs[method], test_labels, alpha
                    ),
                }
            )
            predictor = fit_split_predictor(tensor, data, plan, method, alpha)
            sets = predict_sets(predictor, data.test_probs[method], data.rng)
            report = evaluate_sets(sets, test_labels, alpha, k)
            class_sizes[method].append(report.class_sizes)
            hits = data.test_probs[method].argmax(axis=1) == test_labels
            class_acc[method] += np.bincount(test_labels, weights=hits, minlength=k)
        class_counts += np.bincount(test_labels, minlength=k)

        base_like = Method.BASELINE if Method.BASELINE in methods else methods[0]
        for method in methods:
            if method == base_like and len(methods) > 1:
                continue
            for b in rank_shift_bins(
                data.cal_probs[base_like], data.cal_probs[method], cal_labels
            ):
                shift_rows.append(
                    {
                        "seed": i,
                        "method": method.value,
                        "bin_lo": b.lo,
                        "bin_hi": b.hi,
                        "count": b.count,
                        "mean_base_rank": b.mean_base,
                        "mean_tta_rank": b.mean_tta,
                        "std_base_rank": b.std_base,
                        "std_tta_rank": b.std_tta,
                    }
                )

    class_table, correlations = _class_table(
        methods, class_sizes, class_acc, class_counts, k
    )
    return {
        "format": "ttaconf-analysis-v1",
        "alpha": alpha,
        "optimal_top_k": topk_rows,
        "rank_shift": shift_rows,
        "class_table": class_table,
        "correlations": correlations,
        "csv": {
            "optimal_top_k": _rows_to_csv(topk_rows),
            "rank_shift": _rows_to_csv(shift_rows),
            "class_table": _rows_to_csv(class_table),
        },
    }


def _class_table(methods, class_sizes, class_acc, class_counts, k):
    mean_sizes = {}
    for method in methods:
        stacked = np.vstack(class_sizes[method])
        with np.errstate(invalid="ignore"):
            mean_sizes[method] = np.nanmean(stacked, axis=0)
    accuracy = np.where(class_counts > 0, class_acc[methods[0]] / np.maximum(class_counts, 1), np.nan)

    rows = []
    for c in range(k):
        row = {"class": c, "n_test": int(class_counts[c]), "accuracy": _nan_none(accuracy[c])}
        for method in methods:
            row[f"size_{method.value}"] = _nan_none(mean_sizes[method][c])
        rows.append(row)

    correlations = []
    base_like = Method.BASELINE if Method.BASELINE in methods else methods[0]
    for method in methods:
        if method == base_like:
            continue
        delta = mean_sizes[base_like] - mean_sizes[method]
        ok = ~np.isnan(delta) & ~np.isnan(mean_sizes[base_like]) & ~np.isnan(accuracy)
        if ok.sum() >= 3:
            r_size, p_size = pearson_r(mean_sizes[base_like][ok], delta[ok])
            r_acc, p_acc = pearson_r(accuracy[ok], delta[ok])
            correlations.append(
                {
                    "method": method.value,
                    "size_reduction_vs_base_size": {"r": r_size, "p": p_size},
                    "size_reduction_vs_accuracy": {"r": r_acc, "p": p_acc},
                    "n_classes_used": int(ok.sum()),
                }
            )
    return rows, correlations


def _nan_none(x: float) -> float | None:
    return None if (x is None or (isinstance(x, float) and math.isnan(x))) else float(x)


def _rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    header = list(rows[0].keys())
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_value(row[h]) for h in header))
    return "\n".join(lines) + "\n"


def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def render_report_json(report: dict) -> str:
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def render_report_markdown(report: dict) -> str:
    """Mean +/- std table per alpha, one row per method."""
    lines = ["# Experiment report", ""]
    plan = report["plan"]
    lines.append(
        f"Score: {plan['score']} | splits: {plan['n_splits']} | beta: {plan['beta']} "
        f"| seed: {plan['seed']}"
    )
    lines.append("")
    lines.append("| alpha | method | set size | coverage | SSCV |")
    lines.append("|---|---|---|---|---|")
    for cell in report["cells"]:
        lines.append(
            "| {alpha} | {method} | {size} | {cov} | {sscv} |".format(
                alpha=cell["alpha"],
                method=cell["method"],
                size=_pm(cell["mean_set_size"], cell["std_set_size"]),
                cov=_pm(cell["mean_coverage"], cell["std_coverage"], 4),
                sscv=_pm(cell["mean_sscv"], cell["std_sscv"], 4),
            )
        )
    if report["comparisons"]:
        lines += ["", "| alpha | method | vs | t | p (adj) | significant |", "|---|---|---|---|---|---|"]
        for cmp_row in report["comparisons"]:
            t = "-" if cmp_row["t"] is None else f"{cmp_row['t']:.3f}"
            p = "-" if cmp_row["p_adjusted"] is None else f"{cmp_row['p_adjusted']:.4g}"
            lines.append(
                f"| {cmp_row['alpha']} | {cmp_row['method']} | {cmp_row['reference']} "
                f"({cmp_row['reference_role']}) | {t} | {p} | {cmp_row['significant']} |"
            )
    for note in report["notes"]:
        lines += ["", f"_{note}_"]
    return "\n".join(lines) + "\n"


def _pm(mean: float, std: float | None, digits: int = 3) -> str:
    if std is None:
        return f"{mean:.{digits}f}"
    return f"{mean:.{digits}f} ± {std:.{digits}f}"


def write_report(report: dict, output_dir: str | Path) -> dict[str, Path]:
    """Write report.json and report.md; returns the paths."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    md_path = out / "report.md"
    json_path.write_text(render_report_json(report))
    md_path.write_text(render_report_markdown(report))
    return {"json": json_path, "markdown": md_path}
