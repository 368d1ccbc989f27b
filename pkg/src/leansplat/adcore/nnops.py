"""Matrix, convolution, normalization and sampling primitives."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Array, as_array, record, unbroadcast


def matmul(a, b) -> Array:
    """Batched matrix product; leading dims broadcast, both operands >= 2-D."""
    a = as_array(a)
    b = as_array(b, a.dtype)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return record("matmul", out, (a, b), bw)


def softmax(x, axis: int = -1) -> Array:
    x = as_array(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record("softmax", out, (x,), bw)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Array:
    """Normalize over the last axis, then scale and shift."""
    x = as_array(x)
    gamma = as_array(gamma, x.dtype)
    beta = as_array(beta, x.dtype)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx_hat = g * gamma.data
        gx = rstd * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                     - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        gg = unbroadcast(g * xhat, gamma.shape) if gamma.requires_grad else None
        gb = unbroadcast(g, beta.shape) if beta.requires_grad else None
        return gx, gg, gb

    return record("layer_norm", out, (x, gamma, beta), bw)


def pad2d(x, pads) -> Array:
    """Zero-pad the last two axes; ``pads = (top, bottom, left, right)``."""
    x = as_array(x)
    top, bottom, left, right = pads
    width = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    out = np.pad(x.data, width)
    h, w = x.shape[-2:]
    return record("pad2d", out, (x,), lambda g: (g[..., top:top + h, left:left + w],))


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x, w, stride: int = 1, padding: int = 0) -> Array:
    """Cross-correlation of ``x[C_in,H,W]`` with ``w[C_out,C_in,k,k]`` (no bias)."""
    x = as_array(x)
    w = as_array(w, x.dtype)
    if x.ndim != 3 or w.ndim != 4 or w.shape[1] != x.shape[0] or w.shape[2] != w.shape[3]:
        raise ValueError(f"conv2d shape mismatch: x {x.shape}, w {w.shape}")
    cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(wd, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output would be {ho}x{wo} for input {h}x{wd}, k={k}, stride={stride}, pad={padding}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (C, k, k, Ho, Wo) -> rows indexed like w.reshape(C_out, -1)
    cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(cin * k * k, ho * wo)
    w2 = w.data.reshape(cout, -1)
    out = (w2 @ cols).reshape(cout, ho, wo)

    def bw(g):
        g2 = g.reshape(cout, ho * wo)
        gw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(cin, k, k, ho, wo)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            if stride == k:
                # non-overlapping windows: scatter is a pure reshape
                blk = dcols.transpose(0, 3, 1, 4, 2).reshape(cin, ho * k, wo * k)
                dxp[:, : ho * k, : wo * k] += blk
            else:
                for di in range(k):
                    for dj in range(k):
                        dxp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride] += dcols[:, di, dj]
            gx = dxp[:, padding : padding + h, padding : padding + wd] if padding else dxp
        return gx, gw

    return record("conv2d", out, (x, w), bw)


def bilinear_sample(fmap, pts) -> Array:
    """Sample ``fmap[C,H,W]`` at continuous ``pts[P,2]`` given as (x, y).

    Integer coordinates hit cell centers. Corners outside the grid read as
    zero, so points more than one cell outside return zero features.
    """
    fmap = as_array(fmap)
    pts = as_array(pts, fmap.dtype)
    c, h, w = fmap.shape
    x = pts.data[:, 0]
    y = pts.data[:, 1]
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    fx = x - x0
    fy = y - y0
    flat = fmap.data.reshape(c, h * w)

    corners = []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        xi = x0 + dx
        yi = y0 + dy
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        idx = np.where(valid, yi * w + xi, 0)
        wx = fx if dx else 1.0 - fx
        wy = fy if dy else 1.0 - fy
        vals = flat[:, idx].T * valid[:, None]
        corners.append((idx, valid, wx, wy, vals, dx, dy))

    out = np.zeros((pts.shape[0], c), dtype=fmap.dtype)
    for idx, valid, wx, wy, vals, _, _ in corners:
        out += (wx * wy)[:, None] * vals

    def bw(g):
        gf = None
        if fmap.requires_grad:
            gflat = np.zeros((h * w, c), dtype=g.dtype)
            for idx, valid, wx, wy, _, _, _ in corners:
                np.add.at(gflat, idx, g * (wx * wy * valid)[:, None])
            gf = np.ascontiguousarray(gflat.T).reshape(c, h, w)
        gp = None
        if pts.requires_grad:
            gp = np.zeros(pts.shape, dtype=g.dtype)
            for idx, valid, wx, wy, vals, dx, dy in corners:
                gv = (g * vals).sum(axis=1)
                gp[:, 0] += gv * wy * (1.0 if dx else -1.0)
                gp[:, 1] += gv * wx * (1.0 if dy else -1.0)
        return gf, gp

    return record("bilinear_sample", out, (fmap, pts), bw)


def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Linear resampling matrix ``[n_out, n_in]`` with half-pixel alignment."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        t = src - i0
        m[i, i0] += 1.0 - t
        m[i, i1] += t
    return m


def upsample_bilinear(x, out_h: int, out_w: int) -> Array:
    """Resize ``x[C,h,w]`` to ``[C,out_h,out_w]`` with separable interpolation."""
    x = as_array(x)
    _, h, w = x.shape
    mh = Array(interp_matrix(h, out_h, x.dtype))
    mwt = Array(np.ascontiguousarray(interp_matrix(w, out_w, x.dtype).T))
    return matmul(matmul(mh, x), mwt)
