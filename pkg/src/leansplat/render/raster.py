"""Tile-based alpha compositing kernels.

Splats arrive already depth-sorted. Each tile owns a contiguous slice of
``ids`` listing the splats whose cull extent touches it, in sorted order.
Tiles are processed in parallel; backward writes one partial-gradient row per
(tile, splat) pair and the rows are reduced serially in tile order, so results
do not depend on the thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

N_GRAD = 9  # mean x, mean y, conic a, conic b, conic c, opacity, r, g, b


@njit(cache=True)
def bin_splats(x0, x1, y0, y1, n_tx, n_ty):
    """Tile index ranges [x0, x1] x [y0, y1] per splat -> (offsets, ids)."""
    n = x0.shape[0]
    counts = np.zeros(n_tx * n_ty, dtype=np.int64)
    for s in range(n):
        for ty in range(y0[s], y1[s] + 1):
            for tx in range(x0[s], x1[s] + 1):
                counts[ty * n_tx + tx] += 1
    offsets = np.zeros(n_tx * n_ty + 1, dtype=np.int64)
    for t in range(n_tx * n_ty):
        offsets[t + 1] = offsets[t] + counts[t]
    fill = offsets[:-1].copy()
    ids = np.empty(offsets[-1], dtype=np.int64)
    for s in range(n):
        for ty in range(y0[s], y1[s] + 1):
            for tx in range(x0[s], x1[s] + 1):
                t = ty * n_tx + tx
                ids[fill[t]] = s
                fill[t] += 1
    return offsets, ids


@njit(cache=True, parallel=True)
def raster_forward(means, conics, opac, colors, bg, offsets, ids, height, width, tile,
                   early_stop, t_min, alpha_max):
    out = np.empty((4, height, width), dtype=means.dtype)
    n_tx = (width + tile - 1) // tile
    n_tiles = offsets.shape[0] - 1
    for t in prange(n_tiles):
        ty = t // n_tx
        tx = t - ty * n_tx
        start = offsets[t]
        end = offsets[t + 1]
        for i in range(ty * tile, min((ty + 1) * tile, height)):
            for j in range(tx * tile, min((tx + 1) * tile, width)):
                T = 1.0
                r = 0.0
                g = 0.0
                b = 0.0
                for k in range(start, end):
                    s = ids[k]
                    dx = j - means[s, 0]
                    dy = i - means[s, 1]
                    power = -0.5 * (conics[s, 0] * dx * dx + conics[s, 2] * dy * dy) - conics[s, 1] * dx * dy
                    alpha = opac[s] * np.exp(power)
                    if alpha > alpha_max:
                        alpha = alpha_max
                    w = alpha * T
                    r += colors[s, 0] * w
                    g += colors[s, 1] * w
                    b += colors[s, 2] * w
                    T = T * (1.0 - alpha)
                    if early_stop and T < t_min:
                        break
                out[0, i, j] = r + T * bg[0]
                out[1, i, j] = g + T * bg[1]
                out[2, i, j] = b + T * bg[2]
                out[3, i, j] = 1.0 - T
    return out


@njit(cache=True, parallel=True)
def raster_backward(means, conics, opac, colors, bg, offsets, ids, height, width, tile,
                    early_stop, t_min, alpha_max, grad_out):
    n_pairs = ids.shape[0]
    partial = np.zeros((n_pairs, N_GRAD), dtype=np.float64)
    n_tx = (width + tile - 1) // tile
    n_tiles = offsets.shape[0] - 1
    for t in prange(n_tiles):
        ty = t // n_tx
        tx = t - ty * n_tx
        start = offsets[t]
        end = offsets[t + 1]
        m = end - start
        if m == 0:
            continue
        t_before = np.empty(m, dtype=np.float64)
        alphas = np.empty(m, dtype=np.float64)
        for i in range(ty * tile, min((ty + 1) * tile, height)):
            for j in range(tx * tile, min((tx + 1) * tile, width)):
                # replay the forward pass, keeping transmittances
                T = 1.0
                last = -1
                for k in range(start, end):
                    s = ids[k]
                    dx = j - means[s, 0]
                    dy = i - means[s, 1]
                    power = -0.5 * (conics[s, 0] * dx * dx + conics[s, 2] * dy * dy) - conics[s, 1] * dx * dy
                    alpha = opac[s] * np.exp(power)
                    if alpha > alpha_max:
                        alpha = alpha_max
                    t_before[k - start] = T
                    alphas[k - start] = alpha
                    T = T * (1.0 - alpha)
                    last = k
                    if early_stop and T < t_min:
                        break
                t_final = T
                g0 = grad_out[0, i, j]
                g1 = grad_out[1, i, j]
                g2 = grad_out[2, i, j]
                ga = grad_out[3, i, j]
                # light arriving from behind splat k (later splats + background)
                s0 = bg[0] * t_final
                s1 = bg[1] * t_final
                s2 = bg[2] * t_final
                for k in range(last, start - 1, -1):
                    s = ids[k]
                    alpha = alphas[k - start]
                    tb = t_before[k - start]
                    w = alpha * tb
                    one_m = 1.0 - alpha
                    d_alpha = (g0 * (colors[s, 0] * tb - s0 / one_m)
                               + g1 * (colors[s, 1] * tb - s1 / one_m)
                               + g2 * (colors[s, 2] * tb - s2 / one_m)
                               + ga * t_final / one_m)
                    s0 += colors[s, 0] * w
                    s1 += colors[s, 1] * w
                    s2 += colors[s, 2] * w
                    row = partial[k]
                    row[6] += g0 * w
                    row[7] += g1 * w
                    row[8] += g2 * w
                    dx = j - means[s, 0]
                    dy = i - means[s, 1]
                    power = -0.5 * (conics[s, 0] * dx * dx + conics[s, 2] * dy * dy) - conics[s, 1] * dx * dy
                    gauss = np.exp(power)
                    if opac[s] * gauss > alpha_max:
                        continue
                    row[5] += d_alpha * gauss
                    d_power = d_alpha * alpha
                    row[0] += d_power * (conics[s, 0] * dx + conics[s, 1] * dy)
                    row[1] += d_power * (conics[s, 1] * dx + conics[s, 2] * dy)
                    row[2] += d_power * (-0.5 * dx * dx)
                    row[3] += d_power * (-dx * dy)
                    row[4] += d_power * (-0.5 * dy * dy)
    return partial


@njit(cache=True)
def reduce_pairs(partial, ids, n_splats):
    grads = np.zeros((n_splats, N_GRAD), dtype=np.float64)
    for k in range(ids.shape[0]):
        s = ids[k]
        for c in range(N_GRAD):
            grads[s, c] += partial[k, c]
    return grads
