"""Naive gap-filling references: block-wise mean and linear time interpolation.

Both return a MaskedBlock whose mask flags the voxels that received a value;
observed voxels pass through unchanged.
"""

from __future__ import annotations

import numpy as np

from .tensor import MaskedBlock


def predict_block_mean(block: MaskedBlock) -> MaskedBlock:
    """Fill every gap with the channel mean of all observed voxels of the block."""
    valid = block.valid
    counts = valid.sum(axis=(0, 1, 2))
    sums = np.where(valid, block.data, 0).sum(axis=(0, 1, 2), dtype=np.float64)
    has_data = counts > 0
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=has_data)
    data = np.where(valid, block.data, means.astype(block.data.dtype))
    predicted = np.broadcast_to(has_data, block.shape)
    data = np.where(predicted, data, 0).astype(block.data.dtype)
    return MaskedBlock(data, predicted.astype(block.mask.dtype))


def predict_time_interp(block: MaskedBlock) -> MaskedBlock:
    """Linear interpolation along t per (x, y, c) series, edges carried from the nearest sample.

    Series without any observation stay unpredicted.  Equivalent to
    ``numpy.interp`` on the integer time index, vectorized over series.
    """
    valid = block.valid
    nt = block.shape[2]
    t = np.arange(nt).reshape(1, 1, nt, 1)
    prev = np.maximum.accumulate(np.where(valid, t, -1), axis=2)
    nxt = np.flip(np.minimum.accumulate(np.flip(np.where(valid, t, nt), axis=2), axis=2), axis=2)
    has_prev, has_next = prev >= 0, nxt < nt

    values = block.data.astype(np.float64)
    v_prev = np.take_along_axis(values, np.clip(prev, 0, nt - 1), axis=2)
    v_next = np.take_along_axis(values, np.clip(nxt, 0, nt - 1), axis=2)
    span = np.where(has_prev & has_next & (nxt > prev), nxt - prev, 1)
    ramp = v_prev + (v_next - v_prev) * (t - prev) / span

    out = np.where(has_prev & has_next, ramp, np.where(has_prev, v_prev, v_next))
    out = np.where(valid, values, out)
    predicted = has_prev | has_next
    out = np.where(predicted, out, 0).astype(block.data.dtype)
    return MaskedBlock(out, predicted.astype(block.mask.dtype))
