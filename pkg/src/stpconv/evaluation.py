"""Scoring on held-out voxels and the two validation protocols.

Protocols:

* gap filling: artificial gaps are added to each block, and only voxels
  observed in the original block but removed by the gaps are scored;
* one-step-ahead: the last time slice is withheld entirely and its
  observed voxels are scored.

Scores pool voxels across blocks.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ShapeError
from .maskgen import GapConfig, apply_gaps, make_gap_mask
from .tensor import MaskedBlock

Predictor = Callable[[MaskedBlock], "MaskedBlock | None"]


@dataclass
class BlockScore:
    block_id: int
    missing_fraction: float
    mae: float
    rmse: float
    n_scored: int
    n_excluded: int


@dataclass
class ScoreReport:
    mae: float = math.nan
    rmse: float = math.nan
    n_scored: int = 0
    n_excluded: int = 0
    rows: list = field(default_factory=list)
    strategy: str = ""
    method: str = ""
    prediction_seconds: float = 0.0

    @property
    def applicable(self) -> bool:
        """False when the predictor produced no value for any held-out voxel."""
        return self.n_scored > 0 or self.n_excluded == 0

    def summary(self) -> dict:
        def num(v):
            return None if v is None or (isinstance(v, float) and math.isnan(v)) else v

        return {
            "strategy": self.strategy,
            "method": self.method,
            "mae": num(self.mae),
            "rmse": num(self.rmse),
            "n_scored": self.n_scored,
            "n_excluded": self.n_excluded,
            "n_blocks": len(self.rows),
            "applicable": self.applicable,
            "prediction_seconds": self.prediction_seconds,
        }

    def write(self, csv_path, json_path):
        for p in (csv_path, json_path):
            Path(p).parent.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(BlockScore.__dataclass_fields__))
            writer.writeheader()
            for row in self.rows:
                writer.writerow(asdict(row))
        Path(json_path).write_text(json.dumps(self.summary(), indent=2))


@dataclass
class _Sums:
    abs_err: float = 0.0
    sq_err: float = 0.0
    n: int = 0
    excluded: int = 0

    def metrics(self):
        if self.n == 0:
            return math.nan, math.nan
        return self.abs_err / self.n, math.sqrt(self.sq_err / self.n)


def _score_sums(pred, truth: MaskedBlock, holdout) -> _Sums:
    if isinstance(pred, MaskedBlock):
        values, predicted = pred.data, pred.valid
    else:
        values = np.asarray(pred)
        predicted = np.isfinite(values)
    holdout = np.asarray(holdout, dtype=bool)
    if values.shape != truth.shape or holdout.shape != truth.shape:
        raise ShapeError(f"prediction {values.shape}, truth {truth.shape}, holdout {holdout.shape} differ")
    held = holdout & truth.valid
    scored = held & predicted
    resid = values[scored].astype(np.float64) - truth.data[scored].astype(np.float64)
    return _Sums(float(np.abs(resid).sum()), float((resid**2).sum()), int(scored.sum()), int((held & ~predicted).sum()))


def score(pred, truth: MaskedBlock, holdout, block_id=0, missing_fraction=math.nan) -> ScoreReport:
    """MAE / RMSE over ``holdout`` voxels observed in ``truth``.

    ``pred`` is a MaskedBlock whose mask flags predicted voxels, or a plain
    array where NaN means "no prediction".  Unpredicted held-out voxels are
    counted in ``n_excluded``.
    """
    s = _score_sums(pred, truth, holdout)
    mae, rmse = s.metrics()
    row = BlockScore(block_id, missing_fraction, mae, rmse, s.n, s.excluded)
    return ScoreReport(mae, rmse, s.n, s.excluded, [row])


def _run(blocks, make_case, predictor: Predictor, workers: int, strategy: str):
    cases = [make_case(i, b) for i, b in enumerate(blocks)]

    def one(case):
        x = case[0]
        t0 = time.perf_counter()
        pred = predictor(x)
        return pred, time.perf_counter() - t0

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outputs = list(pool.map(one, cases))
    else:
        outputs = [one(c) for c in cases]

    total = _Sums()
    report = ScoreReport(strategy=strategy)
    for i, ((x, truth, holdout), (pred, secs)) in enumerate(zip(cases, outputs)):
        if pred is None:
            held = holdout & truth.valid
            s = _Sums(excluded=int(held.sum()))
        else:
            s = _score_sums(pred, truth, holdout)
        mae, rmse = s.metrics()
        missing = 1.0 - float(x.valid.mean())
        report.rows.append(BlockScore(i, missing, mae, rmse, s.n, s.excluded))
        total.abs_err += s.abs_err
        total.sq_err += s.sq_err
        total.n += s.n
        total.excluded += s.excluded
        report.prediction_seconds += secs
    report.mae, report.rmse = total.metrics()
    report.n_scored, report.n_excluded = total.n, total.excluded
    return report


def validate_gapfilling(blocks, predictor: Predictor, gap_config: GapConfig, workers=1) -> ScoreReport:
    def case(i, block):
        x, targets = apply_gaps(block, make_gap_mask(block.shape, gap_config, block_id=i))
        return x, block, targets

    return _run(blocks, case, predictor, workers, "gaps")


def withhold_last_slice(block: MaskedBlock) -> tuple[MaskedBlock, np.ndarray]:
    if block.shape[2] < 2:
        raise ShapeError(f"one-step-ahead validation needs nt >= 2, got {block.shape}")
    keep = np.ones(block.shape, dtype=block.mask.dtype)
    keep[:, :, -1, :] = 0
    return apply_gaps(block, keep)


def validate_one_step_ahead(blocks, predictor: Predictor, workers=1) -> ScoreReport:
    def case(i, block):
        x, holdout = withhold_last_slice(block)
        return x, block, holdout

    return _run(blocks, case, predictor, workers, "onestep")
