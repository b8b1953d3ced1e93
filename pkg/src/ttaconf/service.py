"""FastAPI service wrapping the conformal-TTA package.

Endpoints take server-local tensor paths (logit files are too large to
ship per request) or inline probability vectors; calibrated predictors
travel as their serialized text documents so clients can store and replay
them bit-exactly.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import __version__
from .core import ConfigurationError, InvalidInputError, RngState, softmax, validate_probs
from .calibrator import (
    fit_predictor,
    predictor_from_document,
    predictor_to_document,
    predict_sets,
)
from .evaluation import coverage as coverage_metric
from .harness import (
    ExperimentPlan,
    Method,
    analyze,
    render_report_json,
    render_report_markdown,
    run_experiment,
    simulate,
)
from .io import TensorFormatError, read_header, read_tensor, write_tensor
from .scores import ScoreConfig, ScoreKind
from .synth import SynthConfig, TtaMode, generate, method_probs
from .tta import AugWeights, TrainConfig, aggregate_batch, split_validation, train_weights


class RunRequest(BaseModel):
    tensor_path: str
    alphas: list[float] = [0.1]
    score: ScoreKind = ScoreKind.RAPS
    k_reg: int | None = None
    lam: float | None = None
    randomized: bool = True
    methods: list[Method] = [Method.BASELINE, Method.TTA_AVG, Method.TTA_LEARNED]
    beta: float = 0.2
    n_splits: int = 10
    seed: int = 0
    val_downsample: float = 1.0
    train: dict | None = None  # TrainConfig overrides
    max_workers: int = 1  # concurrent splits; results identical at any value

    def to_plan(self) -> ExperimentPlan:
        extra = {}
        if self.train is not None:
            extra["train"] = TrainConfig.from_dict(self.train)
        return ExperimentPlan(
            tensor_path=self.tensor_path,
            alphas=tuple(self.alphas),
            score=self.score,
            k_reg=self.k_reg,
            lam=self.lam,
            randomized=self.randomized,
            methods=tuple(self.methods),
            beta=self.beta,
            n_splits=self.n_splits,
            seed=self.seed,
            val_downsample=self.val_downsample,
            **extra,
        )


class RunResponse(BaseModel):
    report: dict
    report_json: str
    report_markdown: str


class SimulateRequest(BaseModel):
    n_examples: int = 2000
    n_classes: int = 10
    n_augs: int = 4
    signal_strength: list[float] | float = 1.0
    noise_scale: list[float] | float = 1.0
    separation: float = 4.0
    alpha: float = 0.1
    score: ScoreKind = ScoreKind.APS
    k_reg: int | None = None
    lam: float | None = None
    randomized: bool = True
    use_tta: TtaMode = TtaMode.NONE
    n_trials: int = 100
    seed: int = 0
    beta: float = 0.2
    val_fraction: float = 0.5

    def score_config(self) -> ScoreConfig:
        if self.score == ScoreKind.RAPS:
            k_reg = 5 if self.k_reg is None else self.k_reg
            lam = 0.01 if self.lam is None else self.lam
            return ScoreConfig(ScoreKind.RAPS, k_reg=k_reg, lam=lam, randomized=self.randomized)
        return ScoreConfig(ScoreKind.APS, randomized=self.randomized)

    def synth_config(self) -> SynthConfig:
        as_tuple = lambda v: tuple(v) if isinstance(v, list) else v
        return SynthConfig(
            n_examples=self.n_examples,
            n_classes=self.n_classes,
            n_augs=self.n_augs,
            signal_strength=as_tuple(self.signal_strength),
            noise_scale=as_tuple(self.noise_scale),
            separation=self.separation,
            seed=self.seed,
        )


class AnalyzeRequest(RunRequest):
    alpha: float = 0.1


class SynthRequest(BaseModel):
    out_path: str
    n_examples: int = 2000
    n_classes: int = 10
    n_augs: int = 4
    signal_strength: list[float] | float = 1.0
    noise_scale: list[float] | float = 1.0
    separation: float = 4.0
    label_weights: list[float] | None = None
    seed: int = 0

    def synth_config(self) -> SynthConfig:
        as_tuple = lambda v: tuple(v) if isinstance(v, list) else v
        return SynthConfig(
            n_examples=self.n_examples,
            n_classes=self.n_classes,
            n_augs=self.n_augs,
            signal_strength=as_tuple(self.signal_strength),
            noise_scale=as_tuple(self.noise_scale),
            separation=self.separation,
            label_weights=as_tuple(self.label_weights) if self.label_weights else None,
            seed=self.seed,
        )


class InspectRequest(BaseModel):
    path: str


class CalibrateRequest(BaseModel):
    tensor_path: str
    alpha: float = 0.1
    score: ScoreKind = ScoreKind.RAPS
    k_reg: int | None = None
    lam: float | None = None
    randomized: bool = True
    method: Method = Method.TTA_LEARNED
    beta: float = 0.2
    seed: int = 0


class CalibrateResponse(BaseModel):
    predictor_document: str
    q_hat: float
    n_cal: int
    k_reg: int | None
    lam: float | None
    weights: list[float]
    aug_names: list[str]


class PredictRequest(BaseModel):
    predictor_document: str
    tensor_path: str | None = None
    probs: list[list[float]] | None = None
    seed: int = 0


class PredictResponse(BaseModel):
    sets: list[list[int]]
    sizes: list[int]
    coverage: float | None = None
    avg_set_size: float


def _error_response(status: int, kind: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": kind, "detail": message})


def create_app() -> FastAPI:
    app = FastAPI(title="ttaconf", version=__version__)

    @app.exception_handler(InvalidInputError)
    async def _invalid(request, exc):
        return _error_response(400, "invalid-input", str(exc))

    @app.exception_handler(ConfigurationError)
    async def _config(request, exc):
        return _error_response(400, "configuration", str(exc))

    @app.exception_handler(TensorFormatError)
    async def _format(request, exc):
        return _error_response(400, type(exc).__name__, str(exc))

    @app.exception_handler(FileNotFoundError)
    async def _missing(request, exc):
        return _error_response(404, "file-not-found", str(exc))

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/run", response_model=RunResponse)
    def run(request: RunRequest) -> RunResponse:
        report = run_experiment(request.to_plan(), max_workers=max(1, request.max_workers))
        return RunResponse(
            report=report,
            report_json=render_report_json(report),
            report_markdown=render_report_markdown(report),
        )

    @app.post("/simulate")
    def simulate_endpoint(request: SimulateRequest) -> dict:
        return simulate(
            request.synth_config(),
            request.alpha,
            request.score_config(),
            request.use_tta,
            request.n_trials,
            request.seed,
            beta=request.beta,
            val_fraction=request.val_fraction,
        )

    @app.post("/analyze")
    def analyze_endpoint(request: AnalyzeRequest) -> dict:
        return analyze(request.to_plan(), request.alpha)

    @app.post("/synth")
    def synth_endpoint(request: SynthRequest) -> dict:
        tensor = generate(request.synth_config())
        write_tensor(tensor, request.out_path)
        return {
            "path": request.out_path,
            "n_examples": tensor.n_examples,
            "n_augs": tensor.n_augs,
            "n_classes": tensor.n_classes,
            "aug_names": list(tensor.aug_names),
        }

    @app.post("/inspect")
    def inspect(request: InspectRequest) -> dict:
        header = read_header(request.path)
        return {
            "path": request.path,
            "version": header.version,
            "n_examples": header.n_examples,
            "n_augs": header.n_augs,
            "n_classes": header.n_classes,
            "aug_names": list(header.aug_names),
        }

    @app.post("/calibrate", response_model=CalibrateResponse)
    def calibrate_endpoint(request: CalibrateRequest) -> CalibrateResponse:
        predictor = calibrate_from_file(request)
        cfg = predictor.score_config
        return CalibrateResponse(
            predictor_document=predictor_to_document(predictor),
            q_hat=predictor.q_hat,
            n_cal=predictor.n_cal,
            k_reg=cfg.k_reg,
            lam=cfg.lam,
            weights=list(predictor.aug_weights.weights),
            aug_names=list(predictor.aug_weights.aug_names),
        )

    @app.post("/predict", response_model=PredictResponse)
    def predict_endpoint(request: PredictRequest) -> PredictResponse:
        return predict_from_request(request)

    return app


def calibrate_from_file(request: CalibrateRequest):
    """Single-predictor workflow: the whole file acts as validation data."""
    tensor = read_tensor(request.tensor_path)
    rng = RngState(request.seed).substream("calibrate")
    if request.score == ScoreKind.RAPS and (request.k_reg is None or request.lam is None):
        config = ScoreConfig(ScoreKind.RAPS, k_reg=1, lam=0.0, randomized=request.randomized)
        auto_tune = True
    elif request.score == ScoreKind.RAPS:
        config = ScoreConfig(
            ScoreKind.RAPS, k_reg=request.k_reg, lam=request.lam, randomized=request.randomized
        )
        auto_tune = False
    else:
        config, auto_tune = ScoreConfig(ScoreKind.APS, randomized=request.randomized), False

    if request.method == Method.TTA_LEARNED:
        split = split_validation(tensor.n_examples, request.beta, rng)
        theta = train_weights(tensor, split.tta_indices, rng=rng).weights
        cal_idx = split.cal_indices
    else:
        theta = (
            AugWeights.uniform(tensor.aug_names)
            if request.method == Method.TTA_AVG
            else None
        )
        cal_idx = np.arange(tensor.n_examples)
    probs = method_probs(tensor, request.method.tta_mode, cal_idx, theta)
    return fit_predictor(
        probs,
        tensor.labels[cal_idx],
        request.alpha,
        config,
        rng,
        aug_weights=theta,
        auto_tune=auto_tune,
    )


def predict_from_request(request: PredictRequest) -> PredictResponse:
    predictor = predictor_from_document(request.predictor_document)
    rng = RngState(request.seed).substream("predict")
    labels = None
    if request.probs is not None:
        probs = validate_probs(np.asarray(request.probs, dtype=np.float64))
        if probs.ndim != 2:
            raise InvalidInputError("probs must be a list of probability vectors")
    elif request.tensor_path is not None:
        tensor = read_tensor(request.tensor_path)
        weights = predictor.aug_weights
        if weights.n_augs == 1:
            probs = softmax(tensor.logits[:, 0, :])
        elif weights.n_augs == tensor.n_augs:
            probs = aggregate_batch(tensor.logits, weights)
        else:
            raise InvalidInputError(
                f"predictor expects {weights.n_augs} augmentations, "
                f"tensor has {tensor.n_augs}"
            )
        labels = tensor.labels
    else:
        raise InvalidInputError("provide either probs or tensor_path")

    sets = predict_sets(predictor, probs, rng)
    sizes = [s.set_size for s in sets]
    cov = coverage_metric(sets, labels) if labels is not None else None
    return PredictResponse(
        sets=[list(s.members) for s in sets],
        sizes=sizes,
        coverage=cov,
        avg_set_size=float(np.mean(sizes)),
    )
