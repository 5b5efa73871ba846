"""Dense (x, y, t, channel) arrays and the masked-block pair.

A ``Tensor4`` is a plain numpy array of shape ``(nx, ny, nt, nc)``.  The
canonical flat layout has x varying fastest, i.e. numpy Fortran order, so
``flat_index(shape, x, y, t, c) == x + nx * (y + ny * (t + nt * c))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

DTYPE = np.float32
# uint32 dims in the block file; element count also bounded for addressability
MAX_DIM = 2**32 - 1
MAX_ELEMENTS = 2**31 - 1


def check_shape(shape) -> tuple[int, int, int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4:
        raise ShapeError(f"expected a 4-tuple shape, got {shape}")
    if any(s < 1 for s in shape):
        raise ShapeError(f"shape components must be >= 1, got {shape}")
    if any(s > MAX_DIM for s in shape) or int(np.prod(shape, dtype=object)) > MAX_ELEMENTS:
        raise ShapeError(f"shape {shape} overflows the addressable size")
    return shape


def new_filled(shape, fill=0.0, dtype=DTYPE) -> np.ndarray:
    return np.full(check_shape(shape), fill, dtype=dtype)


def as_tensor4(a, dtype=None) -> np.ndarray:
    a = np.asarray(a, dtype=dtype)
    if a.ndim != 4:
        raise ShapeError(f"expected a 4-axis array, got shape {a.shape}")
    check_shape(a.shape)
    return a


_OPS = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(a, b, op: str) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}; expected one of {sorted(_OPS)}") from None
    return fn(a, b)


def flat_index(shape, x: int, y: int, t: int, c: int) -> int:
    nx, ny, nt, nc = shape
    if not (0 <= x < nx and 0 <= y < ny and 0 <= t < nt and 0 <= c < nc):
        raise IndexError(f"index {(x, y, t, c)} out of range for {tuple(shape)}")
    return x + nx * (y + ny * (t + nt * c))


def to_flat(a: np.ndarray) -> np.ndarray:
    """Values in canonical x-fastest order."""
    return np.ravel(a, order="F")


def from_flat(values, shape, dtype=DTYPE) -> np.ndarray:
    shape = check_shape(shape)
    values = np.asarray(values, dtype=dtype)
    if values.size != int(np.prod(shape)):
        raise ShapeError(f"{values.size} values cannot fill shape {shape}")
    return np.reshape(values, shape, order="F")


@dataclass
class MaskedBlock:
    """Data and a same-shaped binary validity mask (1 = observed).

    Data is kept zero wherever the mask is zero.
    """

    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.data = as_tensor4(self.data)
        self.mask = as_tensor4(self.mask)
        if self.data.shape != self.mask.shape:
            raise ShapeError(f"data {self.data.shape} and mask {self.mask.shape} differ")

    @classmethod
    def from_data(cls, data, mask=None, dtype=DTYPE) -> "MaskedBlock":
        """Build a canonical block; NaN entries of ``data`` count as missing."""
        data = np.array(data, dtype=dtype)
        valid = np.isfinite(data)
        if mask is not None:
            valid &= np.asarray(mask) > 0
        data[~valid] = 0
        return cls(data, valid.astype(dtype))

    @property
    def shape(self):
        return self.data.shape

    @property
    def valid(self) -> np.ndarray:
        return self.mask > 0

    def copy(self) -> "MaskedBlock":
        return MaskedBlock(self.data.copy(), self.mask.copy())

    def astype(self, dtype) -> "MaskedBlock":
        return MaskedBlock(self.data.astype(dtype), self.mask.astype(dtype))

    def is_canonical(self) -> bool:
        m = self.mask
        binary = np.all((m == 0) | (m == 1))
        zero_filled = np.all(self.data[m == 0] == 0)
        finite = np.all(np.isfinite(self.data[m == 1]))
        return bool(binary and zero_filled and finite)

    def to_nan(self) -> np.ndarray:
        out = self.data.copy()
        out[~self.valid] = np.nan
        return out
