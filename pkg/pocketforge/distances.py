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
Geometric dissimilarities between point clouds.

Chamfer distance follows the sum-of-squares definition; ``reduction="mean"``
averages each direction instead, which is how benchmark tables report it.
"""
from typing import Callable, Literal, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .cache import DistanceCache
from .cloud import CloudLike, as_points
from .config import EMD_CAP
from .kernels import nearest_sq

Reduction = Literal["sum", "mean"]


def _reduce(a_to_b: np.ndarray, b_to_a: np.ndarray, reduction: str):
    if reduction == "sum":
        return float(a_to_b.sum() + b_to_a.sum())
    if reduction == "mean":
        return float(a_to_b.mean() + b_to_a.mean())
    raise ValueError(f"unknown reduction {reduction!r}")


def chamfer(P: CloudLike, Q: CloudLike, reduction: Reduction = "sum"):
    """
    Chamfer distance by exhaustive nearest-neighbour search.

    ``sum_p min_q |p - q|^2 + sum_q min_p |p - q|^2``.
    """
    p, q = as_points(P), as_points(Q)
    p_to_q, _ = nearest_sq(p, q)
    q_to_p, _ = nearest_sq(q, p)
    return _reduce(p_to_q, q_to_p, reduction)


def chamfer_indexed(
    P: CloudLike, Q: CloudLike, reduction: Reduction = "sum"
):
    """Chamfer distance with k-d tree nearest-neighbour queries."""
    p, q = as_points(P), as_points(Q)
    p_to_q, _ = cKDTree(q).query(p, k=1)
    q_to_p, _ = cKDTree(p).query(q, k=1)
    return _reduce(p_to_q**2, q_to_p**2, reduction)


def emd_exact(P: CloudLike, Q: CloudLike, cap: int = EMD_CAP) -> float:
    """
    Earth Mover's distance: the minimum mean Euclidean ground distance
    over bijections, solved exactly by linear assignment.

    Raises:
        ValueError: the clouds differ in size or exceed ``cap`` points.
    """
    p, q = as_points(P), as_points(Q)
    if p.shape[0] != q.shape[0]:
        raise ValueError(
            "EMD needs clouds of equal cardinality, got "
            f"{p.shape[0]} and {q.shape[0]}"
        )
    if p.shape[0] > cap:
        raise ValueError(
            f"EMD is exact only up to {cap} points, got {p.shape[0]}; "
            "subsample the clouds first"
        )
    cost = cdist(p, q)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def uhd(partial: CloudLike, full: CloudLike) -> float:
    """Unidirectional Hausdorff distance from ``partial`` into ``full``."""
    p, f = as_points(partial), as_points(full)
    dist, _ = cKDTree(f).query(p, k=1)
    return float(dist.max())


def metric_fn(metric: str) -> Callable[[CloudLike, CloudLike], float]:
    """Set-level distance ``D`` by name; CD uses the mean reduction."""
    if metric == "cd":
        return lambda a, b: chamfer_indexed(a, b, reduction="mean")
    if metric == "cd-sum":
        return lambda a, b: chamfer_indexed(a, b, reduction="sum")
    if metric == "emd":
        return emd_exact
    if metric == "uhd":
        return uhd
    raise ValueError(f"unknown metric {metric!r}")


def cross_distances(
    rows: Sequence[CloudLike],
    cols: Sequence[CloudLike],
    metric: str,
    cache: Optional[DistanceCache] = None,
) -> np.ndarray:
    """
    ``D[i, j] = metric(rows[i], cols[j])``, consulting ``cache`` when
    one is given.
    """
    fn = metric_fn(metric)
    out = np.empty((len(rows), len(cols)))
    for i, a in enumerate(rows):
        for j, b in enumerate(cols):
            if cache is None:
                out[i, j] = fn(a, b)
                continue
            key = cache.key(metric, as_points(a), as_points(b))
            hit = cache.get(key)
            if hit is None:
                hit = fn(a, b)
                cache.set(key, hit)
            out[i, j] = hit
    return out
