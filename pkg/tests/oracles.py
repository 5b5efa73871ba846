"""Slow, obviously-correct reference implementations used only by the tests."""

import numpy as np


def naive_conv(data, kernels, bias, stride):
    """Ordinary zero-padded, strided 3-D convolution by explicit loops (float64)."""
    data = np.asarray(data, dtype=np.float64)
    kx, ky, kt, cin, cout = kernels.shape
    nx, ny, nt, _ = data.shape
    sx, sy, st = stride
    ox, oy, ot = -(-nx // sx), -(-ny // sy), -(-nt // st)
    out = np.zeros((ox, oy, ot, cout))
    for i in range(ox):
        for j in range(oy):
            for k in range(ot):
                acc = np.zeros(cout)
                for a in range(kx):
                    for b in range(ky):
                        for c in range(kt):
                            x, y, t = i * sx + a - kx // 2, j * sy + b - ky // 2, k * st + c - kt // 2
                            if 0 <= x < nx and 0 <= y < ny and 0 <= t < nt:
                                acc += data[x, y, t] @ kernels[a, b, c]
                out[i, j, k] = acc + bias
    return out


def naive_pconv(data, mask, kernels, bias, stride):
    """Partial convolution by explicit loops: returns (values, output mask)."""
    data = np.asarray(data, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    kx, ky, kt, cin, cout = kernels.shape
    nx, ny, nt, _ = data.shape
    sx, sy, st = stride
    ox, oy, ot = -(-nx // sx), -(-ny // sy), -(-nt // st)
    out = np.zeros((ox, oy, ot, cout))
    out_mask = np.zeros((ox, oy, ot, cout))
    volume = kx * ky * kt * cin
    for i in range(ox):
        for j in range(oy):
            for k in range(ot):
                acc = np.zeros(cout)
                msum = 0.0
                for a in range(kx):
                    for b in range(ky):
                        for c in range(kt):
                            x, y, t = i * sx + a - kx // 2, j * sy + b - ky // 2, k * st + c - kt // 2
                            if 0 <= x < nx and 0 <= y < ny and 0 <= t < nt:
                                acc += (data[x, y, t] * mask[x, y, t]) @ kernels[a, b, c]
                                msum += mask[x, y, t].sum()
                if msum > 0:
                    out[i, j, k] = acc * volume / msum + bias
                    out_mask[i, j, k] = 1
    return out, out_mask


def interior(shape, kernel_size, stride):
    """Boolean selector of output voxels whose windows never touch padding."""
    sel = np.ones([-(-n // s) for n, s in zip(shape, stride)], dtype=bool)
    for axis, (n, k, s) in enumerate(zip(shape, kernel_size, stride)):
        r = k // 2
        pos = np.arange(sel.shape[axis]) * s
        ok = (pos - r >= 0) & (pos + r < n)
        idx = [None] * 3
        idx[axis] = slice(None)
        sel &= ok[tuple(idx)]
    return sel


def central_diff(f, arr, h=1e-3, index=None):
    """Central finite differences of scalar ``f()`` w.r.t. entries of ``arr`` (modified in place)."""
    grad = np.zeros_like(arr, dtype=np.float64)
    it = np.ndindex(arr.shape) if index is None else index
    for ix in it:
        old = arr[ix]
        arr[ix] = old + h
        fp = f()
        arr[ix] = old - h
        fm = f()
        arr[ix] = old
        grad[ix] = (fp - fm) / (2 * h)
    return grad


def central_diff_piecewise(f, arr, h=1e-3, index=None, min_h=1e-8):
    """Central differences for a piecewise-smooth ``f() -> (value, pattern)``.

    ``pattern`` identifies the active linear piece (e.g. the signs of every
    pre-activation).  When the interval ``[x - h, x + h]`` leaves the piece
    at ``x`` the kink makes the quotient meaningless, so the step is shrunk
    by 10x until both ends land on the same piece.  Returns the gradient and
    the number of entries that needed a smaller step.
    """
    grad = np.zeros_like(arr, dtype=np.float64)
    shrunk = 0
    it = np.ndindex(arr.shape) if index is None else index
    _, base = f()
    for ix in it:
        old = arr[ix]
        step = h
        while True:
            arr[ix] = old + step
            fp, pp = f()
            arr[ix] = old - step
            fm, pm = f()
            arr[ix] = old
            if (pp == base and pm == base) or step <= min_h:
                break
            step /= 10
        shrunk += step < h
        grad[ix] = (fp - fm) / (2 * step)
    return grad, shrunk


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def brute_interp(values, valid):
    """Per-series linear interpolation with edge carry, one element at a time."""
    n = len(values)
    idx = [i for i in range(n) if valid[i]]
    if not idx:
        return None
    out = []
    for t in range(n):
        if valid[t]:
            out.append(float(values[t]))
            continue
        before = [i for i in idx if i < t]
        after = [i for i in idx if i > t]
        if not before:
            out.append(float(values[after[0]]))
        elif not after:
            out.append(float(values[before[-1]]))
        else:
            p, q = before[-1], after[0]
            out.append(float(values[p]) + (float(values[q]) - float(values[p])) * (t - p) / (q - p))
    return out
