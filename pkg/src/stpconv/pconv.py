"""Three-dimensional partial convolution with analytic gradients.

At each output voxel the kernel is applied to ``data * mask``; the result is
rescaled by ``window_volume / window_mask_sum`` (window volume counts all
``kx*ky*kt*cin`` positions) and the bias is added.  Voxels whose window holds
no valid input are zero and invalid.  Boundaries are zero-extended, output
length per axis is ``ceil(n / stride)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import DTYPE, MaskedBlock, as_tensor4


@dataclass
class PConvLayer:
    kernels: np.ndarray  # (kx, ky, kt, cin, cout)
    bias: np.ndarray  # (cout,)
    stride: tuple[int, int, int] = (1, 1, 1)

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels)
        self.bias = np.asarray(self.bias)
        self.stride = tuple(int(s) for s in self.stride)
        if self.kernels.ndim != 5:
            raise ShapeError(f"kernels must be (kx, ky, kt, cin, cout), got {self.kernels.shape}")
        if any(k % 2 == 0 for k in self.kernels.shape[:3]):
            raise ShapeError(f"kernel sizes must be odd, got {self.kernels.shape[:3]}")
        if self.bias.shape != (self.cout,):
            raise ShapeError(f"bias shape {self.bias.shape} does not match cout={self.cout}")
        if len(self.stride) != 3 or min(self.stride) < 1:
            raise ShapeError(f"stride must be three positive counts, got {self.stride}")

    @property
    def kernel_size(self) -> tuple[int, int, int]:
        return self.kernels.shape[:3]

    @property
    def cin(self) -> int:
        return self.kernels.shape[3]

    @property
    def cout(self) -> int:
        return self.kernels.shape[4]

    @property
    def window_volume(self) -> int:
        kx, ky, kt = self.kernel_size
        return kx * ky * kt * self.cin

    @property
    def n_params(self) -> int:
        return self.kernels.size + self.bias.size

    def astype(self, dtype) -> "PConvLayer":
        return PConvLayer(self.kernels.astype(dtype), self.bias.astype(dtype), self.stride)


def init_layer(kernel_size, cin, cout, stride=(1, 1, 1), rng=None, dtype=DTYPE) -> PConvLayer:
    """Fan-in scaled uniform kernels, zero bias."""
    rng = np.random.default_rng(rng)
    kx, ky, kt = kernel_size
    bound = np.sqrt(6.0 / (kx * ky * kt * cin))
    kernels = rng.uniform(-bound, bound, size=(kx, ky, kt, cin, cout)).astype(dtype)
    return PConvLayer(kernels, np.zeros(cout, dtype=dtype), stride)


def output_shape(spatial, kernel_size, stride):
    del kernel_size  # same-padding: only the stride changes the size
    return tuple(-(-n // s) for n, s in zip(spatial, stride))


@dataclass
class PConvCache:
    cols: np.ndarray  # (n_out, kx*ky*kt*cin) windows of data*mask
    ratio: np.ndarray  # (ox, oy, ot), 0 where invalid
    valid: np.ndarray  # (ox, oy, ot) bool
    in_shape: tuple


def _pad_width(kernel_size):
    return [(k // 2, k // 2) for k in kernel_size] + [(0, 0)]


def _windows(padded, kernel_size, stride, out_sp):
    """Strided view (ox, oy, ot, c, kx, ky, kt) over a padded array."""
    v = sliding_window_view(padded, kernel_size, axis=(0, 1, 2))
    sx, sy, st = stride
    ox, oy, ot = out_sp
    return v[: sx * ox : sx, : sy * oy : sy, : st * ot : st]


def window_mask_sum(mask, kernel_size, stride):
    """Number of valid entries in each output window, summed over channels."""
    counts = np.rint(as_tensor4(mask).sum(axis=3)).astype(np.int64)
    for axis, k in enumerate(kernel_size):
        r = k // 2
        width = [(0, 0)] * 3
        width[axis] = (r + 1, r)
        c = np.cumsum(np.pad(counts, width), axis=axis)
        n = counts.shape[axis]
        counts = np.take(c, np.arange(k, k + n), axis=axis) - np.take(c, np.arange(0, n), axis=axis)
    sx, sy, st = stride
    return counts[::sx, ::sy, ::st]


def pconv_forward(block: MaskedBlock, layer: PConvLayer, return_cache=False):
    data, mask = block.data, block.mask
    if data.shape[3] != layer.cin:
        raise ShapeError(f"input has {data.shape[3]} channels, layer expects {layer.cin}")
    dtype = np.result_type(data.dtype, layer.kernels.dtype)
    ks, stride = layer.kernel_size, layer.stride
    out_sp = output_shape(data.shape[:3], ks, stride)

    msum = window_mask_sum(mask, ks, stride)
    valid = msum > 0
    ratio = np.zeros(out_sp, dtype=dtype)
    np.divide(layer.window_volume, msum, out=ratio, where=valid)

    xp = np.pad((data * mask).astype(dtype, copy=False), _pad_width(ks))
    win = _windows(xp, ks, stride, out_sp)  # (ox, oy, ot, cin, kx, ky, kt)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 6, 3)).reshape(-1, layer.window_volume)
    k2 = layer.kernels.reshape(-1, layer.cout).astype(dtype, copy=False)
    conv = (cols @ k2).reshape(*out_sp, layer.cout)

    out = conv * ratio[..., None] + layer.bias.astype(dtype, copy=False)
    out *= valid[..., None]
    out_mask = np.broadcast_to(valid[..., None], out.shape).astype(dtype)
    result = MaskedBlock(out, out_mask)
    if return_cache:
        return result, PConvCache(cols, ratio, valid, data.shape)
    return result


def pconv_backward(
    block: MaskedBlock, layer: PConvLayer, upstream_grad, cache: PConvCache | None = None, need_input_grad=True
):
    """Gradients of ``sum(upstream_grad * output)``.

    Returns ``(grad_kernels, grad_bias, grad_input_data)``.  The mask and the
    rescaling ratio are constants; input positions with mask 0 get gradient 0.
    ``grad_input_data`` is None when ``need_input_grad`` is false.
    """
    if cache is None:
        _, cache = pconv_forward(block, layer, return_cache=True)
    ks, stride = layer.kernel_size, layer.stride
    out_sp = output_shape(block.shape[:3], ks, stride)
    upstream_grad = np.asarray(upstream_grad)
    if upstream_grad.shape != (*out_sp, layer.cout):
        raise ShapeError(f"upstream gradient {upstream_grad.shape} != output {(*out_sp, layer.cout)}")
    if cache.in_shape != block.shape:
        raise ShapeError("cache was produced for a different input shape")
    dtype = cache.cols.dtype

    g = upstream_grad.astype(dtype, copy=False) * cache.valid[..., None]
    grad_bias = g.sum(axis=(0, 1, 2))
    gs = (g * cache.ratio[..., None]).reshape(-1, layer.cout)
    grad_kernels = (cache.cols.T @ gs).reshape(layer.kernels.shape)

    if not need_input_grad:
        return grad_kernels, grad_bias, None

    # per kernel offset: (n_offsets, n_out, cin), contiguous for the scatter below
    kx, ky, kt = ks
    k3 = layer.kernels.reshape(kx * ky * kt, layer.cin, layer.cout).astype(dtype, copy=False)
    gcols = np.matmul(gs[None], k3.transpose(0, 2, 1))
    pad = _pad_width(ks)
    nx, ny, nt, cin = block.shape
    gxp = np.zeros((nx + 2 * pad[0][0], ny + 2 * pad[1][0], nt + 2 * pad[2][0], cin), dtype=dtype)
    sx, sy, st = stride
    ox, oy, ot = out_sp
    j = 0
    for a in range(kx):
        for b in range(ky):
            for c in range(kt):
                gxp[a : a + sx * ox : sx, b : b + sy * oy : sy, c : c + st * ot : st] += gcols[j].reshape(ox, oy, ot, cin)
                j += 1
    grad_input = gxp[pad[0][0] : pad[0][0] + nx, pad[1][0] : pad[1][0] + ny, pad[2][0] : pad[2][0] + nt]
    grad_input = grad_input * block.mask
    return grad_kernels, grad_bias, grad_input


def upsample_nearest(block: MaskedBlock, factor) -> MaskedBlock:
    factor = tuple(int(f) for f in factor)
    if len(factor) != 3 or min(factor) < 1:
        raise ShapeError(f"upsampling factors must be three counts >= 1, got {factor}")

    def rep(a):
        for axis, f in enumerate(factor):
            if f > 1:
                a = np.repeat(a, f, axis=axis)
        return a

    return MaskedBlock(rep(block.data), rep(block.mask))


def upsample_backward(grad, factor) -> np.ndarray:
    """Adjoint of nearest replication: sum each replicated group."""
    fx, fy, ft = factor
    nx, ny, nt, nc = grad.shape
    return grad.reshape(nx // fx, fx, ny // fy, fy, nt // ft, ft, nc).sum(axis=(1, 3, 5))


def leaky_relu(x, alpha=0.1) -> np.ndarray:
    x = np.asarray(x)
    return np.where(x >= 0, x, alpha * x).astype(x.dtype, copy=False)


def leaky_relu_backward(x, upstream, alpha=0.1) -> np.ndarray:
    x = np.asarray(x)
    return np.where(x >= 0, upstream, alpha * upstream).astype(np.result_type(x, upstream), copy=False)
