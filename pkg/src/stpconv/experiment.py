"""Desk-scale convergence experiment on synthetic translating bumps.

Trains a reduced network on generated blocks and scores it next to the two
naive baselines under both validation strategies.  Used by the acceptance
suite and by ``scripts/desk_experiment.py``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .baselines import predict_block_mean, predict_time_interp
from .blocks import SyntheticConfig, generate_synthetic
from .evaluation import ScoreReport, validate_gapfilling, validate_one_step_ahead
from .maskgen import GapConfig
from .model import ModelSpec, ModelState, build, predict
from .train import FitResult, TrainConfig, fit


def desk_synthetic() -> SyntheticConfig:
    # Short-lived bumps: temporal neighbours are informative but not
    # sufficient, as with day-to-day changes in real trace-gas fields.
    return SyntheticConfig(lifetime_range=(1.0, 3.0), n_bumps=14)


@dataclass
class DeskExperiment:
    n_train: int = 48
    n_val: int = 16
    block_shape: tuple = (64, 64, 16, 1)
    train_seed: int = 1
    val_seed: int = 2
    model_seed: int = 0
    model: ModelSpec = field(default_factory=lambda: ModelSpec(filters=[8, 8]))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(batch_size=1))
    train_gaps: GapConfig = field(default_factory=lambda: GapConfig(seed=3))
    val_gaps: GapConfig = field(default_factory=lambda: GapConfig(seed=99))
    synthetic: SyntheticConfig = field(default_factory=desk_synthetic)


@dataclass
class DeskResult:
    fit: FitResult
    train_seconds: float
    reports: dict  # (method, strategy) -> ScoreReport

    @property
    def state(self) -> ModelState:
        return self.fit.state

    def mae(self, method, strategy) -> float:
        return self.reports[method, strategy].mae


def datasets(exp: DeskExperiment):
    train = generate_synthetic(exp.n_train, exp.block_shape, exp.synthetic, seed=exp.train_seed)
    val = generate_synthetic(exp.n_val, exp.block_shape, exp.synthetic, seed=exp.val_seed)
    return train, val


def score_all(predictors: dict, val, gaps: GapConfig, workers=1) -> dict[tuple, ScoreReport]:
    out = {}
    for name, p in predictors.items():
        out[name, "gaps"] = validate_gapfilling(val, p, gaps, workers=workers)
        out[name, "onestep"] = validate_one_step_ahead(val, p, workers=workers)
        for strategy in ("gaps", "onestep"):
            out[name, strategy].method = name
    return out


def run(exp: DeskExperiment, on_epoch=None) -> DeskResult:
    train, val = datasets(exp)
    state = build(exp.model, seed=exp.model_seed)
    t0 = time.perf_counter()
    result = fit(train, exp.model, state, exp.train_gaps, exp.train, on_epoch=on_epoch)
    seconds = time.perf_counter() - t0
    trained = result.state
    predictors = {
        "mean": predict_block_mean,
        "interp": predict_time_interp,
        "stpconv": lambda b: predict(trained, exp.model, b),
    }
    return DeskResult(result, seconds, score_all(predictors, val, exp.val_gaps))
