"""Acceptance suite: one test per release criterion, printed pass/fail lines.

Run with `pytest tests/test_acceptance.py -v -s` to see the ACCEPTANCE lines.
All randomness is counter-based and seeded, so results are bit-stable.
"""

import json
import math
import os
import time

import numpy as np
import pytest
import scipy.stats

from ttaconf.calibrator import calibrate, predict_set
from ttaconf.cli import main as cli_main
from ttaconf.core import RngState, softmax
from ttaconf.evaluation import (
    optimal_top_k,
    paired_t_test,
    pearson_r,
    regularized_incomplete_beta,
    sscv,
)
from ttaconf.harness import ExperimentPlan, Method, run_experiment
from ttaconf.io import write_tensor
from ttaconf.scores import ScoreConfig, ScoreKind, aps_score, score_all_classes
from ttaconf.synth import SynthConfig, TtaMode, coverage_trial, generate
from ttaconf.tta import TrainConfig, cross_entropy_and_grad, train_weights

APS = ScoreConfig(ScoreKind.APS)

# K=10, M=4; 1125 examples split 625 validation / 500 test, beta 0.2
# carves validation into 125 training + 500 calibration examples.
COVERAGE_SYNTH = SynthConfig(
    n_examples=1125, n_classes=10, n_augs=4,
    signal_strength=1.0, noise_scale=5.0, separation=3.0, seed=0,
)
VAL_FRACTION = 625 / 1125
N_CAL = 500


def check(name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


def test_coverage_guarantee_all_pipelines():
    t0 = time.time()
    failures = []
    details = []
    for alpha in (0.01, 0.05, 0.1):
        lo, hi = 1 - alpha, 1 - alpha + 1 / (N_CAL + 1)
        for mode in (TtaMode.NONE, TtaMode.AVG, TtaMode.LEARNED):
            cov = coverage_trial(
                COVERAGE_SYNTH, alpha, APS, mode, 200,
                RngState(2026, "acceptance-coverage"), val_fraction=VAL_FRACTION,
            )
            se = cov.std() / math.sqrt(200)
            ok = lo - 3 * se <= cov.mean() <= hi + 3 * se
            details.append(f"{mode.value}@{alpha}={cov.mean():.4f}")
            if not ok:
                failures.append(
                    f"{mode.value}@{alpha}: {cov.mean():.4f} outside "
                    f"[{lo:.4f}, {hi:.4f}] +- {3 * se:.4f}"
                )
    elapsed = time.time() - t0
    if elapsed >= 120:
        failures.append(f"runtime {elapsed:.0f}s >= 120s")
    check(
        "coverage-guarantee",
        not failures,
        "; ".join(failures) if failures else f"{'; '.join(details)}; {elapsed:.1f}s",
    )


def test_coverage_distribution_beta_law():
    # bigger test half so per-trial binomial noise is small next to the Beta law
    config = SynthConfig(
        n_examples=2625, n_classes=10, n_augs=4,
        signal_strength=1.0, noise_scale=5.0, separation=3.0, seed=0,
    )
    alpha = 0.1
    cov = coverage_trial(
        config, alpha, APS, TtaMode.NONE, 200,
        RngState(7, "acceptance-beta-law"), val_fraction=625 / 2625,
    )
    k = math.ceil((N_CAL + 1) * (1 - alpha))
    a, b = k, N_CAL + 1 - k
    xs = np.sort(cov)
    cdf = np.array([regularized_incomplete_beta(a, b, x) for x in xs])
    grid = np.arange(1, 201) / 200
    ks = float(max(np.max(np.abs(grid - cdf)), np.max(np.abs(grid - 1 / 200 - cdf))))
    check("coverage-beta-law", ks < 0.1, f"KS={ks:.4f} vs Beta({a},{b})")


def _run_plan(tensor, tmp_path, name, seed=0):
    path = tmp_path / f"{name}.ttac"
    write_tensor(tensor, path)
    plan = ExperimentPlan(
        tensor_path=str(path), alphas=(0.1,), score=ScoreKind.RAPS,
        methods=(Method.BASELINE, Method.TTA_LEARNED), n_splits=10, seed=seed,
    )
    return run_experiment(plan)


def test_set_size_reduction_direction(tmp_path):
    informative = generate(
        SynthConfig(
            n_examples=2000, n_classes=10, n_augs=2,
            signal_strength=(1.0, 1.0), noise_scale=(2.0, 2.0),
            separation=4.0, seed=11,
        )
    )
    report = _run_plan(informative, tmp_path, "informative")
    sizes = {c["method"]: c["mean_set_size"] for c in report["cells"]}
    test_row = next(
        c for c in report["comparisons"]
        if c["method"] == "tta_learned" and c["reference_role"] == "baseline"
    )
    reduced = sizes["tta_learned"] < sizes["baseline"] and test_row["p_raw"] < 0.05

    pure_noise = generate(
        SynthConfig(
            n_examples=2000, n_classes=10, n_augs=2,
            signal_strength=(1.0, 0.0), noise_scale=(1.5, 3.0),
            separation=3.0, seed=11,
        )
    )
    noise_report = _run_plan(pure_noise, tmp_path, "pure-noise")
    noise_sizes = {c["method"]: c["mean_set_size"] for c in noise_report["cells"]}
    rel = abs(noise_sizes["tta_learned"] - noise_sizes["baseline"]) / noise_sizes["baseline"]
    no_harm = rel <= 0.05

    check(
        "set-size-reduction",
        reduced and no_harm,
        f"informative {sizes['baseline']:.3f}->{sizes['tta_learned']:.3f} "
        f"p={test_row['p_raw']:.2e}; pure-noise rel diff {rel:.2%}",
    )


@pytest.mark.skipif(
    "TTACONF_IMAGENET_TTAC" not in os.environ,
    reason="set TTACONF_IMAGENET_TTAC to a real ImageNet logit file to enable",
)
def test_imagenet_raps_row_reproduction(tmp_path):
    plan = ExperimentPlan(
        tensor_path=os.environ["TTACONF_IMAGENET_TTAC"],
        alphas=(0.1,), score=ScoreKind.RAPS,
        methods=(Method.BASELINE,), n_splits=10, seed=0,
    )
    report = run_experiment(plan)
    mean_size = report["cells"][0]["mean_set_size"]
    check(
        "imagenet-raps-row",
        abs(mean_size - 2.548) <= 0.2,
        f"RAPS@0.1 mean size {mean_size:.3f} vs 2.548 +- 0.2",
    )


def test_gradient_correctness():
    gen = RngState(17, "acceptance-grad").generator()
    worst = 0.0
    for _ in range(100):
        m = int(gen.integers(1, 9))
        k = int(gen.integers(2, 21))
        n = int(gen.integers(5, 40))
        z = gen.normal(size=(n, m, k)) * 3
        y = gen.integers(0, k, size=n)
        theta = gen.normal(size=m)
        _, grad = cross_entropy_and_grad(theta, z, y)
        h = 1e-5
        for j in range(m):
            e = np.zeros(m)
            e[j] = h
            lp, _ = cross_entropy_and_grad(theta + e, z, y)
            lm, _ = cross_entropy_and_grad(theta - e, z, y)
            fd = (lp - lm) / (2 * h)
            rel = abs(grad[j] - fd) / max(1.0, abs(fd))
            worst = max(worst, rel)
    check("gradient-correctness", worst < 1e-5, f"worst rel err {worst:.2e}")


def test_oracle_equivalence_q_hat():
    gen = RngState(23, "acceptance-qhat").generator()
    mismatches = 0
    worst_score_gap = 0.0
    for trial in range(1000):
        n = int(gen.integers(1, 201))
        k = int(gen.integers(2, 12))
        probs = softmax(gen.normal(size=(n, k)) * 2)
        labels = gen.integers(0, k, size=n)
        alpha = float(gen.uniform(0.01, 0.5))
        rng = RngState(trial, "acceptance-qhat-rng")
        predictor = calibrate(probs, labels, alpha, APS, rng)
        # brute force: per-example scores, explicit python sort and index
        u = rng.substream("calibration-u").generator().uniform(size=n)
        per_example = [
            float(score_all_classes(probs[i], float(u[i]), APS)[labels[i]])
            for i in range(n)
        ]
        # the strict-inequality single-label formula agrees up to summation order
        worst_score_gap = max(
            worst_score_gap,
            max(
                abs(per_example[i] - aps_score(probs[i], int(labels[i]), float(u[i])))
                for i in range(n)
            ),
        )
        rank = math.ceil((n + 1) * (1 - alpha))
        expected = math.inf if rank > n else sorted(per_example)[rank - 1]
        if predictor.q_hat != expected:
            mismatches += 1
    check(
        "oracle-q-hat",
        mismatches == 0 and worst_score_gap < 1e-12,
        f"{mismatches}/1000 q-hat mismatches, scorer gap {worst_score_gap:.2e}",
    )


def test_oracle_equivalence_predict_set():
    gen = RngState(29, "acceptance-sets").generator()
    mismatches = 0
    for trial in range(1000):
        k = int(gen.integers(2, 12))
        probs = softmax(gen.normal(size=k) * 2)
        q_hat = float(gen.uniform(0.0, 1.3))
        predictor = calibrate(
            softmax(gen.normal(size=(3, k))), gen.integers(0, k, size=3),
            0.5, APS, RngState(trial, "seed-cal"),
        )
        predictor = type(predictor)(
            score_config=predictor.score_config, alpha=predictor.alpha,
            q_hat=q_hat, aug_weights=predictor.aug_weights, n_cal=predictor.n_cal,
        )
        rng = RngState(trial, "acceptance-set-rng")
        got = predict_set(predictor, probs, rng)
        u = float(rng.substream("test-u").generator().uniform(size=1)[0])
        members = tuple(
            y for y in range(k) if aps_score(probs, y, u) < q_hat
        )
        if not members:
            members = (int(np.argmax(probs)),)
        if got.members != members:
            mismatches += 1
    check("oracle-predict-set", mismatches == 0, f"{mismatches}/1000 mismatches")


def test_metric_fixtures():
    from ttaconf.calibrator import PredictionSet

    failures = []

    # sscv: two-bin hand computation -> 0.4
    sets = [PredictionSet((0,))] * 4 + [PredictionSet((0, 1, 2, 3, 4))] * 4
    labels = np.array([0, 0, 0, 0, 1, 2, 9, 9])
    if abs(sscv(sets, labels, 0.1) - 0.4) > 1e-6:
        failures.append("sscv")

    # optimal_top_k: hand scan over ranks -> 7
    base = softmax(np.linspace(3.0, 0.0, 10))
    ranks = [1, 1, 1, 2, 3, 4, 5, 6, 7, 10]
    probs = np.tile(base, (10, 1))
    top_labels = np.array([r - 1 for r in ranks])
    if optimal_top_k(probs, top_labels, 0.1) != 7:
        failures.append("optimal_top_k")

    # pearson_r: closed-form oracle for [1,2,3] vs [1,2,4]
    r, p = pearson_r(np.array([1.0, 2, 3]), np.array([1.0, 2, 4]))
    ref = scipy.stats.pearsonr([1.0, 2, 3], [1.0, 2, 4])
    if abs(r - ref.statistic) > 1e-6 or abs(p - ref.pvalue) > 1e-6:
        failures.append("pearson_r")

    # paired_t_test: reference statistical implementation oracle
    diffs = np.array([0.5, -0.2, 0.3, 0.1, 0.4])
    b = np.array([1.0, 1.1, 0.9, 1.05, 1.0])
    a = b + diffs
    result = paired_t_test(a, b, n_comparisons=3)
    ref_t = scipy.stats.ttest_rel(a, b)
    if abs(result.t - ref_t.statistic) > 1e-6 or abs(result.p_raw - ref_t.pvalue) > 1e-6:
        failures.append("paired_t_test")

    check("metric-fixtures", not failures, ", ".join(failures) or "all four match")


def test_cmd_run_determinism(tmp_path, capsys):
    tensor = generate(
        SynthConfig(
            n_examples=700, n_classes=8, n_augs=3,
            signal_strength=(1.0, 1.0, 0.3), noise_scale=2.0, seed=5,
        )
    )
    path = tmp_path / "det.ttac"
    write_tensor(tensor, path)
    args = [
        "run", "--tensor", str(path), "--alphas", "0.05,0.1",
        "--n-splits", "10", "--seed", "9",
    ]
    assert cli_main(args + ["--output-dir", str(tmp_path / "r1")]) == 0
    assert cli_main(args + ["--output-dir", str(tmp_path / "r2")]) == 0
    capsys.readouterr()
    b1 = (tmp_path / "r1" / "report.json").read_bytes()
    b2 = (tmp_path / "r2" / "report.json").read_bytes()
    check("cmd-run-determinism", b1 == b2, f"{len(b1)} bytes, identical={b1 == b2}")


def test_near_zero_weight_detection():
    flagged = 0
    for seed in range(10):
        tensor = generate(
            SynthConfig(
                n_examples=400, n_classes=10, n_augs=2,
                signal_strength=(1.0, 0.0), noise_scale=(1.0, 3.0), seed=seed,
            )
        )
        result = train_weights(
            tensor, np.arange(400), TrainConfig(), RngState(seed, "acceptance-zero")
        )
        if result.weights.near_zero_mask()[1]:
            flagged += 1
    check("near-zero-weights", flagged >= 8, f"{flagged}/10 seeds flagged the noise view")
