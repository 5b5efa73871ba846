"""Artificial gaps from thresholded smooth random fields.

Each time slice gets its own field: white noise smoothed with an isotropic
Gaussian kernel (scale ``correlation_length`` pixels), then standardized.
The ``mask_fraction`` lowest-valued pixels become gaps, so gaps come as
contiguous blobs rather than scattered pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ShapeError
from .tensor import DTYPE, MaskedBlock, check_shape


@dataclass(frozen=True)
class GapConfig:
    correlation_length: float = 8.0
    mask_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not self.correlation_length > 0:
            raise ConfigError(f"correlation_length must be > 0, got {self.correlation_length}")
        if not 0 < self.mask_fraction < 1:
            raise ConfigError(f"mask_fraction must lie in (0, 1), got {self.mask_fraction}")


def _rng(config: GapConfig, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(config.seed), *map(int, keys)]))


def simulate_field(nx: int, ny: int, config: GapConfig, rng=None) -> np.ndarray:
    """Zero-mean, unit-variance smooth field of shape (nx, ny)."""
    rng = _rng(config) if rng is None else rng
    noise = rng.standard_normal((nx, ny))
    field = ndimage.gaussian_filter(noise, sigma=config.correlation_length, mode="wrap")
    field -= field.mean()
    sd = field.std()
    if sd > 0:
        field /= sd
    return field


def threshold_slice(field: np.ndarray, mask_fraction: float) -> np.ndarray:
    """Keep-mask (1 = keep) with exactly ``floor(mask_fraction * size)`` gaps."""
    n_gap = int(np.floor(mask_fraction * field.size))
    order = np.argsort(field, axis=None, kind="stable")
    keep = np.ones(field.size, dtype=DTYPE)
    keep[order[:n_gap]] = 0
    return keep.reshape(field.shape)


def make_gap_mask(block_shape, config: GapConfig, block_id: int = 0, epoch: int = 0, stream: int = 0) -> np.ndarray:
    """Keep-mask of ``block_shape``; one independent field per time slice, shared by channels.

    The result is a pure function of ``(config.seed, stream, block_id, epoch)``;
    ``stream`` separates unrelated uses of the same seed.
    """
    nx, ny, nt, nc = check_shape(block_shape)
    mask = np.empty((nx, ny, nt, nc), dtype=DTYPE)
    for t in range(nt):
        field = simulate_field(nx, ny, config, _rng(config, stream, block_id, epoch, t))
        mask[:, :, t, :] = threshold_slice(field, config.mask_fraction)[..., None]
    return mask


def apply_gaps(block: MaskedBlock, gap_mask) -> tuple[MaskedBlock, np.ndarray]:
    """Remove gap-masked voxels; returns the reduced block and the boolean target set."""
    gap_mask = np.asarray(gap_mask)
    if gap_mask.shape != block.shape:
        raise ShapeError(f"gap mask {gap_mask.shape} does not match block {block.shape}")
    mask = (block.mask * gap_mask).astype(block.mask.dtype)
    data = block.data * mask
    targets = (block.mask > 0) & (gap_mask == 0)
    return MaskedBlock(data, mask), targets
