"""Block files, synthetic datasets, and overlap tiling of large rasters.

Block file layout (all little-endian)::

    offset  size  content
    0       4     magic b"STPB"
    4       1     version (1)
    5       16    nx, ny, nt, nc as uint32
    21      4*N   float32 payload, x fastest, then y, t, channel; NaN = missing
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BlockFormatError, ConfigError, CoverageError, ShapeError
from .maskgen import GapConfig, make_gap_mask
from .tensor import DTYPE, MaskedBlock, check_shape, from_flat, to_flat

MAGIC = b"STPB"
VERSION = 1
_HEADER = struct.Struct("<4sB4I")
HEADER_SIZE = _HEADER.size


def encode_block(block: MaskedBlock) -> bytes:
    nx, ny, nt, nc = block.shape
    payload = to_flat(block.to_nan()).astype("<f4").tobytes()
    return _HEADER.pack(MAGIC, VERSION, nx, ny, nt, nc) + payload


def decode_block(raw: bytes) -> MaskedBlock:
    if len(raw) < HEADER_SIZE:
        raise BlockFormatError(f"file too short for a header ({len(raw)} bytes)", offset=len(raw))
    magic, version, nx, ny, nt, nc = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BlockFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise BlockFormatError(f"unsupported version {version}", offset=4)
    try:
        shape = check_shape((nx, ny, nt, nc))
    except ShapeError as exc:
        raise BlockFormatError(str(exc), offset=5) from exc
    n = nx * ny * nt * nc
    if len(raw) != HEADER_SIZE + 4 * n:
        raise BlockFormatError(
            f"payload holds {len(raw) - HEADER_SIZE} bytes, dims need {4 * n}", offset=min(len(raw), HEADER_SIZE + 4 * n)
        )
    values = np.frombuffer(raw, dtype="<f4", count=n, offset=HEADER_SIZE).astype(DTYPE)
    return MaskedBlock.from_data(from_flat(values, shape))


def save_block(path, block: MaskedBlock):
    Path(path).write_bytes(encode_block(block))


def load_block(path) -> MaskedBlock:
    return decode_block(Path(path).read_bytes())


def save_dataset(directory, blocks, prefix="block") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, block in enumerate(blocks):
        p = directory / f"{prefix}_{i:05d}.stpb"
        save_block(p, block)
        paths.append(p)
    return paths


def list_blocks(directory) -> list[Path]:
    return sorted(Path(directory).glob("*.stpb"))


def load_dataset(directory) -> tuple[list[Path], list[MaskedBlock]]:
    paths = list_blocks(directory)
    return paths, [load_block(p) for p in paths]


# --- synthetic data ------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    """Smooth Gaussian bumps drifting with a common per-block velocity.

    ``velocity`` fixes the drift (px per slice along x, y) for all blocks;
    otherwise each block draws a direction and a speed from ``speed_range``.
    Native gaps use the same random-field masks as artificial ones with a
    per-block fraction drawn from ``native_gap_range``; ``(0, 0)`` disables them.
    """

    n_bumps: int = 6
    sigma_range: tuple = (4.0, 10.0)
    amplitude_range: tuple = (0.01, 0.035)
    background: float = 0.02
    speed_range: tuple = (0.5, 1.5)
    velocity: tuple | None = None
    noise_std: float = 0.0005
    native_gap_range: tuple = (0.05, 0.3)
    native_correlation_length: float = 4.0
    lifetime_range: tuple | None = None


def synthetic_block(shape, config: SyntheticConfig, rng: np.random.Generator, gap_seed=0, block_id=0) -> MaskedBlock:
    nx, ny, nt, nc = check_shape(shape)
    if config.velocity is not None:
        vx, vy = config.velocity
    else:
        speed = rng.uniform(*config.speed_range)
        angle = rng.uniform(0, 2 * np.pi)
        vx, vy = speed * np.cos(angle), speed * np.sin(angle)
    x = np.arange(nx, dtype=np.float64)[:, None, None]
    y = np.arange(ny, dtype=np.float64)[None, :, None]
    t = np.arange(nt, dtype=np.float64)[None, None, :]
    field = np.full((nx, ny, nt), config.background)
    # centres spread beyond the block so bumps drift in and out
    span_x, span_y = nx + abs(vx) * nt, ny + abs(vy) * nt
    for _ in range(config.n_bumps):
        cx = rng.uniform(-0.25 * span_x, nx + 0.25 * span_x) - vx * nt / 2
        cy = rng.uniform(-0.25 * span_y, ny + 0.25 * span_y) - vy * nt / 2
        sigma = rng.uniform(*config.sigma_range)
        amp = rng.uniform(*config.amplitude_range)
        if config.lifetime_range is not None:
            # transient bumps: a Gaussian envelope in time around a random peak slice
            tau = rng.uniform(*config.lifetime_range)
            amp = amp * np.exp(-((t - rng.uniform(-1, nt)) ** 2) / (2 * tau**2))
        field = field + amp * np.exp(-((x - cx - vx * t) ** 2 + (y - cy - vy * t) ** 2) / (2 * sigma**2))
    data = np.repeat(field[..., None], nc, axis=3)
    if config.noise_std > 0:
        data = data + rng.normal(0, config.noise_std, size=data.shape)
    data = data.astype(DTYPE)

    lo, hi = config.native_gap_range
    if hi > 0:
        frac = rng.uniform(lo, hi)
        gaps = GapConfig(config.native_correlation_length, min(max(frac, 1e-6), 1 - 1e-6), seed=gap_seed)
        mask = make_gap_mask(data.shape, gaps, block_id=block_id, stream=1)
    else:
        mask = np.ones(data.shape, dtype=DTYPE)
    return MaskedBlock(data * mask, mask)


def generate_synthetic(n_blocks: int, shape, config: SyntheticConfig | None = None, seed: int = 0) -> list[MaskedBlock]:
    config = SyntheticConfig() if config is None else config
    blocks = []
    for i in range(n_blocks):
        rng = np.random.default_rng([seed, i])
        blocks.append(synthetic_block(shape, config, rng, gap_seed=seed, block_id=i))
    return blocks


# --- tiling ---------------------------------------------------------------------


@dataclass(frozen=True)
class Placement:
    index: tuple  # block lattice coordinates
    origin: tuple  # raster coordinates of the block's first voxel (may be negative)
    core_lo: tuple  # raster coordinates, inclusive
    core_hi: tuple  # raster coordinates, exclusive


@dataclass(frozen=True)
class BlockGrid:
    raster: tuple  # (NX, NY, NT)
    block: tuple  # (bx, by, bt)
    margin: tuple = (4, 4, 0)

    def __post_init__(self):
        for name in ("raster", "block", "margin"):
            v = tuple(int(x) for x in getattr(self, name))
            if len(v) != 3:
                raise ConfigError(f"{name} needs three values, got {v}")
            object.__setattr__(self, name, v)
        if min(self.raster) < 1 or min(self.block) < 1 or min(self.margin) < 0:
            raise ConfigError("raster and block sizes must be >= 1 and margins >= 0")
        for b, m, axis in zip(self.block, self.margin, "xyt"):
            if 2 * m >= b:
                raise ConfigError(f"margin {m} along {axis} must be less than half the block size {b}")

    @property
    def core(self) -> tuple:
        return tuple(b - 2 * m for b, m in zip(self.block, self.margin))

    @property
    def counts(self) -> tuple:
        return tuple(math.ceil(n / c) for n, c in zip(self.raster, self.core))

    def placements(self) -> list[Placement]:
        out = []
        for idx in np.ndindex(*self.counts):
            lo = tuple(i * c for i, c in zip(idx, self.core))
            hi = tuple(min(l + c, n) for l, c, n in zip(lo, self.core, self.raster))
            origin = tuple(l - m for l, m in zip(lo, self.margin))
            out.append(Placement(tuple(idx), origin, lo, hi))
        return out


def _window(raster_shape, origin, size):
    """Source/destination slices for copying a block window clipped to the raster."""
    src, dst = [], []
    for o, s, n in zip(origin, size, raster_shape):
        a, b = max(o, 0), min(o + s, n)
        src.append(slice(a, b))
        dst.append(slice(a - o, b - o))
    return tuple(src), tuple(dst)


def tile(raster: MaskedBlock, grid: BlockGrid) -> list[tuple[MaskedBlock, Placement]]:
    if tuple(raster.shape[:3]) != grid.raster:
        raise ShapeError(f"raster shape {raster.shape[:3]} does not match grid {grid.raster}")
    nc = raster.shape[3]
    out = []
    for p in grid.placements():
        data = np.zeros((*grid.block, nc), dtype=raster.data.dtype)
        mask = np.zeros((*grid.block, nc), dtype=raster.mask.dtype)
        src, dst = _window(grid.raster, p.origin, grid.block)
        data[dst] = raster.data[src]
        mask[dst] = raster.mask[src]
        out.append((MaskedBlock(data, mask), p))
    return out


def stitch(predictions, grid: BlockGrid):
    """Assemble per-block outputs, each voxel taken from the block whose core holds it.

    ``predictions`` holds ``(array or MaskedBlock, Placement)`` pairs; the
    result type follows the inputs.
    """
    predictions = list(predictions)
    if not predictions:
        raise CoverageError("no predictions to stitch")
    masked = isinstance(predictions[0][0], MaskedBlock)
    first = predictions[0][0].data if masked else np.asarray(predictions[0][0])
    nc = first.shape[3]
    data = np.zeros((*grid.raster, nc), dtype=first.dtype)
    mask = np.zeros((*grid.raster, nc), dtype=first.dtype) if masked else None
    seen = set()
    for pred, p in predictions:
        if p.index in seen:
            raise CoverageError(f"block {p.index} placed twice")
        seen.add(p.index)
        arr = pred.data if masked else np.asarray(pred)
        if arr.shape[:3] != grid.block:
            raise ShapeError(f"prediction {arr.shape} does not match block size {grid.block}")
        core = tuple(slice(l, h) for l, h in zip(p.core_lo, p.core_hi))
        local = tuple(slice(l - o, h - o) for l, h, o in zip(p.core_lo, p.core_hi, p.origin))
        data[core] = arr[local]
        if masked:
            mask[core] = pred.mask[local]
    expected = {p.index for p in grid.placements()}
    if seen != expected:
        raise CoverageError(f"missing placements for blocks {sorted(expected - seen)[:5]}")
    return MaskedBlock(data, mask) if masked else data


def predict_raster(raster: MaskedBlock, grid: BlockGrid, predictor, workers=1):
    """Tile, predict every block (optionally on a thread pool), stitch."""
    tiles = tile(raster, grid)

    def one(item):
        block, placement = item
        return predictor(block), placement

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, tiles))
    else:
        results = [one(t) for t in tiles]
    return stitch(results, grid)


def merge_with_observations(pred, original: MaskedBlock) -> np.ndarray:
    pred = pred.data if isinstance(pred, MaskedBlock) else np.asarray(pred)
    if pred.shape != original.shape:
        raise ShapeError(f"prediction {pred.shape} and original {original.shape} differ")
    return np.where(original.valid, original.data, pred).astype(original.data.dtype)


# --- rendering ------------------------------------------------------------------

MISSING_GRAY = 0


def render_pgm(block: MaskedBlock, directory, prefix="slice", vmin=None, vmax=None, channel=0) -> list[Path]:
    """One binary 8-bit PGM per time slice.

    Values map linearly from ``[vmin, vmax]`` (defaults: observed range) onto
    gray levels 1..255, clipped; missing voxels are gray 0.  Image rows run
    along y, columns along x.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data, valid = block.data[..., channel], block.valid[..., channel]
    if valid.any():
        vmin = float(data[valid].min()) if vmin is None else vmin
        vmax = float(data[valid].max()) if vmax is None else vmax
    else:
        vmin, vmax = 0.0, 1.0
    scale = 254.0 / (vmax - vmin) if vmax > vmin else 0.0
    paths = []
    nx, ny, nt = data.shape
    for t in range(nt):
        gray = np.clip(np.rint(1 + (data[:, :, t] - vmin) * scale), 1, 255).astype(np.uint8)
        gray[~valid[:, :, t]] = MISSING_GRAY
        p = directory / f"{prefix}_{t:03d}.pgm"
        p.write_bytes(f"P5\n{nx} {ny}\n255\n".encode() + np.ascontiguousarray(gray.T).tobytes())
        paths.append(p)
    return paths
