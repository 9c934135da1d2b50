"""Exact anisotropic squared Euclidean distance transform.

Separable lower-envelope method: one pass per axis, each pass computing
g[i] = min_j (f[j] + w2 * (i - j)^2) over its lines, where w2 is the squared
voxel spacing along that axis. Squared distances come out as exact float64
sums of spacing^2 times integer squared offsets, so no square roots are ever
taken and radius comparisons stay exact.

Lines are independent, so the parallel loop is bit-deterministic for any
thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

_INF = np.inf


@njit(cache=True)
def _transform_line(f, d, v, z, w2):
    # f: input costs (may contain +inf), d: output, v/z: scratch of length
    # n and n+1. Parabolas with infinite cost never enter the envelope.
    n = f.shape[0]
    k = -1
    for q in range(n):
        fq = f[q]
        if fq == _INF:
            continue
        if k >= 0:
            p = v[k]
            s = (fq + w2 * q * q - (f[p] + w2 * p * p)) / (2.0 * w2 * (q - p))
            while s <= z[k]:
                k -= 1
                p = v[k]
                s = (fq + w2 * q * q - (f[p] + w2 * p * p)) / (2.0 * w2 * (q - p))
        else:
            s = -_INF
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = _INF
    if k < 0:
        for q in range(n):
            d[q] = _INF
        return
    j = 0
    for q in range(n):
        while z[j + 1] < q:
            j += 1
        p = v[j]
        dq = q - p
        d[q] = w2 * dq * dq + f[p]


@njit(parallel=True, cache=True)
def _transform_lines(a, w2):
    m, n = a.shape
    for i in prange(m):
        f = a[i].copy()
        v = np.empty(n, np.int64)
        z = np.empty(n + 1, np.float64)
        _transform_line(f, a[i], v, z, w2)


def edt_sq_grid(mask_zyx: np.ndarray, spacing: tuple[float, float, float]) -> np.ndarray:
    """Per-voxel squared mm distance to the nearest false voxel of mask_zyx.

    False voxels get 0. If the mask is all true there is no background and
    every voxel gets +inf. Axis passes run x, then y, then z, so each output
    value accumulates as (sx^2*dx^2 + sy^2*dy^2) + sz^2*dz^2.
    """
    sx, sy, sz = spacing
    nz, ny, nx = mask_zyx.shape
    g = np.where(mask_zyx, _INF, 0.0)
    _transform_lines(g.reshape(nz * ny, nx), sx * sx)
    g = np.ascontiguousarray(g.transpose(0, 2, 1))  # (nz, nx, ny)
    _transform_lines(g.reshape(nz * nx, ny), sy * sy)
    g = np.ascontiguousarray(g.transpose(1, 2, 0))  # (nx, ny, nz)
    _transform_lines(g.reshape(nx * ny, nz), sz * sz)
    return np.ascontiguousarray(g.transpose(2, 1, 0))
