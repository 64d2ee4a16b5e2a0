# Copyright (C) 2024 The pocketforge authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
# http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
# implied.
# See the License for the specific language governing permissions and
# limitations under the License.
#
"""
JIT-compiled kernels for the brute-force nearest-neighbour search and the
voxel histogram.

Numba is used when importable; otherwise the same loops run as chunked
numpy code with identical results. ``fastmath`` stays off so both paths
agree to the last bit on the squared distances.
"""
import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def decorator(func):
            return func

        return decorator


_CHUNK = 1024


@njit(cache=True, nogil=True)
def _nearest_numba(a, b, out_dist, out_index):
    n = a.shape[0]
    m = b.shape[0]
    for i in range(n):
        best = np.inf
        best_j = 0
        ax = a[i, 0]
        ay = a[i, 1]
        az = a[i, 2]
        for j in range(m):
            dx = ax - b[j, 0]
            dy = ay - b[j, 1]
            dz = az - b[j, 2]
            d = dx * dx + dy * dy + dz * dz
            # strict < keeps the lowest index on ties
            if d < best:
                best = d
                best_j = j
        out_dist[i] = best
        out_index[i] = best_j


def _nearest_numpy(a, b, out_dist, out_index):
    for start in range(0, a.shape[0], _CHUNK):
        block = a[start : start + _CHUNK]
        diff = block[:, None, :] - b[None, :, :]
        d = (
            diff[..., 0] * diff[..., 0]
            + diff[..., 1] * diff[..., 1]
            + diff[..., 2] * diff[..., 2]
        )
        idx = np.argmin(d, axis=1)
        out_index[start : start + _CHUNK] = idx
        out_dist[start : start + _CHUNK] = d[np.arange(len(idx)), idx]


def nearest_sq(a: np.ndarray, b: np.ndarray):
    """
    For every row of ``a`` find the nearest row of ``b``.

    Returns:
        (squared distances, indices into ``b``); ties resolve to the
        lowest index.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    out_dist = np.empty(a.shape[0], dtype=np.float64)
    out_index = np.empty(a.shape[0], dtype=np.int64)
    if NUMBA_AVAILABLE:
        _nearest_numba(a, b, out_dist, out_index)
    else:
        _nearest_numpy(a, b, out_dist, out_index)
    return out_dist, out_index


@njit(cache=True, nogil=True)
def _voxel_counts_numba(pts, grid, counts):
    clamped = 0
    for i in range(pts.shape[0]):
        flat = 0
        outside = False
        for c in range(3):
            # clipped before the cast so huge coordinates cannot overflow
            scaled = (pts[i, c] + 1.0) * 0.5 * grid
            scaled = min(max(scaled, -1.0), float(grid))
            k = int(np.floor(scaled))
            if k < 0:
                k = 0
                outside = True
            elif k >= grid:
                # +1.0 exactly lands on the last voxel
                if pts[i, c] > 1.0:
                    outside = True
                k = grid - 1
            flat = flat * grid + k
        counts[flat] += 1.0
        if outside:
            clamped += 1
    return clamped


def _voxel_counts_numpy(pts, grid, counts):
    scaled = np.clip((pts + 1.0) * 0.5 * grid, -1.0, grid)
    k = np.floor(scaled).astype(np.int64)
    outside = np.any((k < 0) | (pts > 1.0), axis=1)
    k = np.clip(k, 0, grid - 1)
    flat = (k[:, 0] * grid + k[:, 1]) * grid + k[:, 2]
    np.add.at(counts, flat, 1.0)
    return int(outside.sum())


def voxel_counts(pts: np.ndarray, grid: int):
    """
    Histogram points over ``grid**3`` voxels tiling ``[-1, 1]^3``.

    Points outside the cube are clamped into the boundary voxel.

    Returns:
        (flat count vector of length ``grid**3``, number clamped)
    """
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    counts = np.zeros(grid**3, dtype=np.float64)
    if NUMBA_AVAILABLE:
        clamped = _voxel_counts_numba(pts, grid, counts)
    else:
        clamped = _voxel_counts_numpy(pts, grid, counts)
    return counts, int(clamped)
