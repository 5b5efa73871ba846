"""Masked-MAE training with Adam and a step learning-rate schedule."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ConfigError, EmptyTargetError, NumericalError
from .maskgen import GapConfig, apply_gaps, make_gap_mask
from .model import ModelSpec, ModelState, backward, forward
from .tensor import MaskedBlock

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 0.005
    lr_decay_every: int = 10
    lr_decay_factor: float = 0.1
    min_epochs: int = 30
    batch_size: int = 6
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    workers: int = 1

    def __post_init__(self):
        if not self.initial_lr > 0:
            raise ConfigError("initial_lr must be > 0")
        if self.batch_size < 1 or self.min_epochs < 1 or self.lr_decay_every < 1:
            raise ConfigError("batch_size, min_epochs and lr_decay_every must be >= 1")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")


def masked_mae(pred, target, targets) -> tuple[float, np.ndarray]:
    """Mean absolute error over the boolean ``targets`` set and its gradient w.r.t. ``pred``."""
    targets = np.asarray(targets, dtype=bool)
    n = int(targets.sum())
    if n == 0:
        raise EmptyTargetError("masked MAE is undefined on an empty target set")
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    loss = float(np.abs(diff[targets]).sum() / n)
    grad = np.where(targets, np.sign(diff) / n, 0.0).astype(np.asarray(pred).dtype)
    return loss, grad


@dataclass
class AdamMoments:
    m: dict
    v: dict

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamMoments":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: dict, moments: AdamMoments, step_index: int, config: TrainConfig, lr=None):
    """One bias-corrected Adam update; ``step_index`` counts from 1.  Inputs are not modified."""
    lr = config.initial_lr if lr is None else lr
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_epsilon
    c1 = 1 - b1**step_index
    c2 = 1 - b2**step_index
    new_params, m_new, v_new = {}, {}, {}
    for k, p in params.items():
        g = grads[k].astype(p.dtype, copy=False)
        m = b1 * moments.m[k] + (1 - b1) * g
        v = b2 * moments.v[k] + (1 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        new_params[k] = (p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
        m_new[k], v_new[k] = m.astype(p.dtype), v.astype(p.dtype)
    return new_params, AdamMoments(m_new, v_new)


def lr_at_epoch(epoch: int, config: TrainConfig) -> float:
    if epoch < 1:
        raise ValueError("epochs count from 1")
    return config.initial_lr * config.lr_decay_factor ** ((epoch - 1) // config.lr_decay_every)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_mae: float
    wall_seconds: float


@dataclass
class FitResult:
    state: ModelState
    log: list = field(default_factory=list)
    steps: int = 0
    skipped: int = 0


def write_loss_log(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "train_mae", "wall_seconds"])
        for r in rows:
            w.writerow([r.epoch, repr(r.lr), repr(r.train_mae), f"{r.wall_seconds:.3f}"])


def _item_gradient(state, spec, block: MaskedBlock, gap_mask):
    x, targets = apply_gaps(block, gap_mask)
    out, cache = forward(state, spec, x)
    targets &= out.valid
    if not targets.any():
        return None
    loss, grad = masked_mae(out.data, block.data, targets)
    if not math.isfinite(loss):
        return loss, None
    return loss, backward(state, spec, cache, grad)


def _first_nonfinite_layer(state, spec, block, gap_mask):
    x, _ = apply_gaps(block, gap_mask)
    try:
        forward(state, spec, x, keep_cache=False, check_finite=True)
    except NumericalError as exc:
        return str(exc)
    return "no non-finite activation; loss overflowed"


def fit(
    dataset: list[MaskedBlock],
    spec: ModelSpec,
    state: ModelState,
    gap_config: GapConfig,
    config: TrainConfig,
    epochs: int | None = None,
    on_epoch=None,
) -> FitResult:
    """Train on ``dataset``; artificial gaps are redrawn every epoch.

    Batch items are reduced in batch order, so results do not depend on
    ``config.workers``.  With ``workers == 1`` BLAS is pinned to one thread
    and the run is bitwise reproducible.
    """
    if not dataset:
        raise ConfigError("training dataset is empty")
    if spec.in_channels != spec.out_channels:
        raise ConfigError("self-supervised training needs out_channels == in_channels")
    for b in dataset:
        spec.check_input(b.shape)
    epochs = config.min_epochs if epochs is None else max(epochs, config.min_epochs)
    result = FitResult(state)
    moments = AdamMoments.zeros_like(state.parameters())
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    limits = threadpool_limits(1) if config.workers == 1 else None
    try:
        for epoch in range(1, epochs + 1):
            t0 = time.perf_counter()
            lr = lr_at_epoch(epoch, config)
            order = np.random.default_rng([config.seed, epoch]).permutation(len(dataset))
            losses = []
            for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
                idx = order[start : start + config.batch_size]
                gaps = [make_gap_mask(dataset[i].shape, gap_config, block_id=int(i), epoch=epoch) for i in idx]
                cur = result.state

                def work(k, cur=cur, idx=idx, gaps=gaps):
                    return _item_gradient(cur, spec, dataset[idx[k]], gaps[k])

                items = list(pool.map(work, range(len(idx)))) if pool else [work(k) for k in range(len(idx))]
                total, n_ok = None, 0
                for k, item in enumerate(items):
                    if item is None:
                        log.warning("epoch %d batch %d: block %d has no scorable target voxels, skipped", epoch, batch_no, idx[k])
                        result.skipped += 1
                        continue
                    loss, grads = item
                    if grads is None:
                        where = _first_nonfinite_layer(cur, spec, dataset[idx[k]], gaps[k])
                        raise NumericalError(f"non-finite loss at epoch {epoch}, batch {batch_no}: {where}")
                    losses.append(loss)
                    n_ok += 1
                    total = dict(grads) if total is None else {n: total[n] + g for n, g in grads.items()}
                if n_ok == 0:
                    continue
                total = {n: g / n_ok for n, g in total.items()}
                result.steps += 1
                params, moments = adam_step(cur.parameters(), total, moments, result.steps, config, lr)
                result.state = cur.with_parameters(params)
            row = EpochLog(epoch, lr, float(np.mean(losses)) if losses else math.nan, time.perf_counter() - t0)
            result.log.append(row)
            log.info("epoch %d lr %.2e train_mae %.6g (%.1fs)", epoch, lr, row.train_mae, row.wall_seconds)
            if on_epoch is not None:
                on_epoch(row, result.state)
    finally:
        if pool is not None:
            pool.shutdown()
        if limits is not None:
            limits.unregister()
    return result
