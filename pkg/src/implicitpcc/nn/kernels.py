"""Row-independent numeric kernels for inference.

Every output row is computed from its own input row with a fixed
summation order, so results do not depend on batch size or on a row's
position within the batch. BLAS gives no such guarantee (gemm vs gemv
dispatch, blocking by matrix shape), and numpy's SIMD transcendental
loops may treat tail elements differently, so the decoder-visible path
avoids both.
"""

import math

import numba
import numpy as np


@numba.njit(cache=True)
def positional_encode_rows(coords, levels):
    n, d = coords.shape
    width = 0
    for c in range(d):
        width += 2 * levels[c] + 1
    out = np.empty((n, width))
    for i in range(n):
        col = 0
        for c in range(d):
            v = coords[i, c]
            out[i, col] = v
            col += 1
            freq = math.pi
            for _ in range(levels[c]):
                out[i, col] = math.sin(freq * v)
                out[i, col + 1] = math.cos(freq * v)
                col += 2
                freq *= 2.0
    return out


@numba.njit(cache=True)
def dense(x, w, b):
    n, k = x.shape
    m = w.shape[1]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = b[j]
        for p in range(k):
            xv = x[i, p]
            if xv != 0.0:
                for j in range(m):
                    out[i, j] += xv * w[p, j]
    return out


@numba.njit(cache=True)
def layer_norm(x, gain, shift, eps):
    n, m = x.shape
    out = np.empty_like(x)
    for i in range(n):
        s = 0.0
        for j in range(m):
            s += x[i, j]
        mean = s / m
        s = 0.0
        for j in range(m):
            d = x[i, j] - mean
            s += d * d
        inv = 1.0 / math.sqrt(s / m + eps)
        for j in range(m):
            out[i, j] = gain[j] * ((x[i, j] - mean) * inv) + shift[j]
    return out


@numba.njit(cache=True)
def sine(x, omega0):
    out = np.empty_like(x)
    n, m = x.shape
    for i in range(n):
        for j in range(m):
            out[i, j] = math.sin(omega0 * x[i, j])
    return out


@numba.njit(cache=True)
def sigmoid(x):
    out = np.empty_like(x)
    n, m = x.shape
    lo = np.nextafter(0.0, 1.0)
    hi = np.nextafter(1.0, 0.0)
    for i in range(n):
        for j in range(m):
            z = x[i, j]
            if z >= 0.0:
                p = 1.0 / (1.0 + math.exp(-z))
            else:
                e = math.exp(z)
                p = e / (1.0 + e)
            out[i, j] = min(max(p, lo), hi)
    return out
