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
Generative evaluation: Jensen-Shannon divergence of voxelized marginals,
coverage, minimum matching distance, total mutual difference and
unidirectional Hausdorff fidelity.

Stored values are unscaled; :func:`format_report` applies the customary
powers of ten for display only.
"""
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np
from pydantic import BaseModel, Field

from . import distances
from .cache import DistanceCache
from .cloud import CloudLike, PartitionedCloud, as_points, resample
from .config import EMD_CAP, EVAL_K, EVAL_POINTS, JSD_GRID
from .generation import complete
from .kernels import voxel_counts
from .model import HyperPocket
from .utils import substream

logger = logging.getLogger(__name__)

PER_ELEMENT_COLUMNS = ("source_id", "uhd", "tmd", "cd_first")


class MetricReport(BaseModel):
    """Aggregated generation metrics. ``tmd`` is None when ``k == 1``."""

    jsd: float = Field(ge=0)
    cov_cd: float = Field(ge=0, le=1)
    cov_emd: float = Field(ge=0, le=1)
    mmd_cd: float = Field(ge=0)
    mmd_emd: float = Field(ge=0)
    tmd: Optional[float] = Field(default=None, ge=0)
    uhd: float = Field(ge=0)
    k: int = Field(ge=1)
    n_reference: int = Field(ge=1)
    sigma: float = Field(gt=0)


def _marginal(clouds: Sequence[CloudLike], grid: int):
    total = np.zeros(grid**3)
    clamped = 0
    for cloud in clouds:
        counts, n = voxel_counts(as_points(cloud), grid)
        total += counts
        clamped += n
    return total / total.sum(), clamped


def _kl(p: np.ndarray, m: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / m[mask])))


def jsd(
    generated: Sequence[CloudLike],
    reference: Sequence[CloudLike],
    grid: int = JSD_GRID,
) -> float:
    """
    Jensen-Shannon divergence (natural log) between the marginal point
    distributions of two sets over ``grid**3`` voxels of ``[-1, 1]^3``.

    Points outside the cube land in the nearest boundary voxel; the
    number clamped is logged as a warning.
    """
    if not generated or not reference:
        raise ValueError("both cloud sets must be non-empty")
    if grid < 1:
        raise ValueError("grid must be at least 1")
    p_g, clamped_g = _marginal(generated, grid)
    p_r, clamped_r = _marginal(reference, grid)
    if clamped_g or clamped_r:
        logger.warning(
            "JSD: %d points outside [-1, 1]^3 clamped to the boundary",
            clamped_g + clamped_r,
        )
    m = 0.5 * (p_g + p_r)
    return 0.5 * _kl(p_r, m) + 0.5 * _kl(p_g, m)


def _cross(
    generated, reference, metric: str, cache: Optional[DistanceCache]
) -> np.ndarray:
    if not generated or not reference:
        raise ValueError("both cloud sets must be non-empty")
    return distances.cross_distances(generated, reference, metric, cache)


def coverage(
    generated: Sequence[CloudLike],
    reference: Sequence[CloudLike],
    metric: str = "cd",
    cache: Optional[DistanceCache] = None,
) -> float:
    """Fraction of reference clouds that are the nearest neighbour of at
    least one generated cloud (lowest index on ties)."""
    d = _cross(generated, reference, metric, cache)
    matched = np.unique(d.argmin(axis=1))
    return matched.size / len(reference)


def mmd(
    generated: Sequence[CloudLike],
    reference: Sequence[CloudLike],
    metric: str = "cd",
    cache: Optional[DistanceCache] = None,
) -> float:
    """Mean over reference clouds of the distance to the closest
    generated cloud."""
    d = _cross(generated, reference, metric, cache)
    return float(d.min(axis=0).mean())


def tmd(completions: Sequence[CloudLike]) -> float:
    """
    Total mutual difference: for each completion the mean Chamfer (mean
    reduction) to the other ``k - 1``, summed over completions.
    """
    k = len(completions)
    if k < 2:
        raise ValueError("TMD needs at least 2 completions")
    d = distances.cross_distances(completions, completions, "cd")
    np.fill_diagonal(d, 0.0)
    return float(np.sum(d.sum(axis=1) / (k - 1)))


def _evaluate_element(
    model: HyperPocket,
    part: PartitionedCloud,
    index: int,
    k: int,
    sigma: float,
    n_points: int,
    seed: int,
):
    completions = complete(
        model,
        part.existing,
        k,
        sigma,
        n_points,
        substream(seed, "eval-gen", index),
    )
    fidelity = float(
        np.mean([distances.uhd(part.existing, c) for c in completions])
    )
    diversity = tmd(completions) if k >= 2 else None
    return completions, fidelity, diversity


def _emd_views(
    clouds: Sequence[CloudLike], size: int, seed: int, tag: str
):
    views = []
    for index, cloud in enumerate(clouds):
        pts = as_points(cloud)
        if pts.shape[0] != size:
            rng = substream(seed, "emd", tag, index)
            pts = resample(pts, size, rng).points
        views.append(pts)
    return views


def eval_generation(
    model: HyperPocket,
    test_set: Sequence[PartitionedCloud],
    k: int = EVAL_K,
    sigma: float = 0.05,
    n_points: int = EVAL_POINTS,
    seed: int = 0,
    grid: int = JSD_GRID,
    cache: Optional[DistanceCache] = None,
    threads: int = 1,
) -> Tuple[MetricReport, List[list]]:
    """
    Complete every test partial ``k`` times and score the result.

    UHD is averaged over each element's completions and TMD computed per
    element, both then averaged over elements. JSD compares all
    completions with the reference full clouds; COV and MMD compare the
    first completion of each element with the references so both sets
    have equal size. EMD compares subsamples of one common size, at most
    :data:`EMD_CAP` points.

    Returns:
        (report, per-element rows ``[source_id, uhd, tmd, cd_first]``)
    """
    if not test_set:
        raise ValueError("test set must not be empty")
    if k < 1:
        raise ValueError("k must be at least 1")
    if k == 1:
        logger.warning("TMD is undefined for k=1; reporting it as absent")

    def run(indexed):
        index, part = indexed
        return _evaluate_element(model, part, index, k, sigma, n_points, seed)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        results = list(executor.map(run, enumerate(test_set)))

    reference = [part.full for part in test_set]
    pooled = [c for completions, _, _ in results for c in completions]
    firsts = [completions[0] for completions, _, _ in results]
    rows = [
        [
            part.source_id,
            fidelity,
            diversity,
            distances.chamfer_indexed(
                completions[0], part.full, reduction="mean"
            ),
        ]
        for part, (completions, fidelity, diversity) in zip(
            test_set, results
        )
    ]
    size = min(EMD_CAP, *(len(as_points(c)) for c in firsts + reference))
    emd_gen = _emd_views(firsts, size, seed, "gen")
    emd_ref = _emd_views(reference, size, seed, "ref")
    report = MetricReport(
        jsd=jsd(pooled, reference, grid),
        cov_cd=coverage(firsts, reference, "cd", cache),
        cov_emd=coverage(emd_gen, emd_ref, "emd", cache),
        mmd_cd=mmd(firsts, reference, "cd", cache),
        mmd_emd=mmd(emd_gen, emd_ref, "emd", cache),
        tmd=(
            float(np.mean([r[2] for r in rows])) if k >= 2 else None
        ),
        uhd=float(np.mean([r[1] for r in rows])),
        k=k,
        n_reference=len(reference),
        sigma=sigma,
    )
    if cache is not None:
        cache.log_stats()
    return report, rows


# Display scaling per metric.
REPORT_SCALES = {
    "jsd": 2,
    "mmd_emd": 2,
    "mmd_cd": 3,
    "tmd": 3,
    "cd": 4,
}


def format_report(report: MetricReport) -> str:
    """Human-readable summary with table-style ``x10^n`` scaling."""
    lines = [
        f"k = {report.k}, sigma = {report.sigma:g}, "
        f"{report.n_reference} reference clouds"
    ]
    for name in ("jsd", "mmd_cd", "mmd_emd", "tmd"):
        value = getattr(report, name)
        power = REPORT_SCALES[name]
        if value is None:
            lines.append(f"{name.upper():8s} (x10^{power}): n/a")
        else:
            lines.append(
                f"{name.upper():8s} (x10^{power}): {value * 10**power:.3f}"
            )
    lines.append(f"{'COV_CD':8s} (%):     {100 * report.cov_cd:.1f}")
    lines.append(f"{'COV_EMD':8s} (%):     {100 * report.cov_emd:.1f}")
    lines.append(f"{'UHD':8s}:           {report.uhd:.4f}")
    return "\n".join(lines)


def format_cd(value: float) -> str:
    power = REPORT_SCALES["cd"]
    return f"CD (x10^{power}): {value * 10**power:.3f}"
