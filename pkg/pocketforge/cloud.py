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
Point clouds, noise sampling, rigid transforms and existing/missing
partitioning.

Every cloud is an immutable ``(n, 3)`` float64 array wrapped in
:class:`PointCloud`. Functions that take a generator are pure given that
generator.
"""
from dataclasses import dataclass, field
from typing import Union
import logging

import numpy as np

logger = logging.getLogger(__name__)

AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True, eq=False)
class PointCloud:
    """
    An ordered multiset of 3D points in normalized object coordinates.

    Parameters
    ----------
    points : array_like
        ``(n, 3)`` coordinates; copied, cast to float64 and frozen.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim == 1 and pts.size == 3:
            pts = pts.reshape(1, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(
                f"point cloud must have shape (n, 3), got {pts.shape}"
            )
        if pts.shape[0] < 1:
            raise ValueError("empty cloud")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains NaN or Inf")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return np.array_equal(self.points, other.points)

    def take(self, indices) -> "PointCloud":
        return PointCloud(self.points[np.asarray(indices, dtype=np.int64)])


CloudLike = Union[PointCloud, np.ndarray]


def as_points(cloud: CloudLike) -> np.ndarray:
    """Return the ``(n, 3)`` array behind a cloud or array."""
    if isinstance(cloud, PointCloud):
        return cloud.points
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(
            f"point cloud must have shape (n, 3), got {pts.shape}"
        )
    if pts.shape[0] == 0:
        raise ValueError("empty cloud")
    return pts


@dataclass(frozen=True, eq=False)
class SplitPlane:
    """Plane ``{p : p . normal = offset}`` with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = np.array(self.normal, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(normal) - 1.0) > 1e-9:
            raise ValueError("split plane normal must have unit length")
        normal.setflags(write=False)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))

    def as_record(self) -> list:
        return [*map(float, self.normal), self.offset]

    @classmethod
    def from_record(cls, record) -> "SplitPlane":
        if len(record) != 4:
            raise ValueError("plane record needs four numbers")
        return cls(normal=record[:3], offset=record[3])


@dataclass(frozen=True, eq=False)
class PartitionedCloud:
    """
    A cloud split into the existing part ``P_e`` and the missing part
    ``P_m``. ``existing_index`` and ``missing_index`` are positions in
    the source cloud, each sorted ascending.
    """

    existing: PointCloud
    missing: PointCloud
    plane: SplitPlane
    source_id: str
    existing_index: np.ndarray = field(repr=False)
    missing_index: np.ndarray = field(repr=False)

    @property
    def full(self) -> PointCloud:
        """Source cloud reassembled in its original order."""
        n = len(self.existing) + len(self.missing)
        pts = np.empty((n, 3))
        pts[self.existing_index] = self.existing.points
        pts[self.missing_index] = self.missing.points
        return PointCloud(pts)


def normalize_unit_sphere(cloud: CloudLike) -> PointCloud:
    """Center on the centroid and scale so the farthest point has norm 1."""
    pts = as_points(cloud)
    centered = pts - pts.mean(axis=0)
    radius = np.sqrt((centered**2).sum(axis=1)).max()
    if radius <= 1e-12:
        raise ValueError("degenerate cloud")
    return PointCloud(centered / radius)


def _unit_directions(n: int, rng: np.random.Generator) -> np.ndarray:
    gauss = rng.standard_normal((n, 3))
    norms = np.sqrt((gauss**2).sum(axis=1, keepdims=True))
    # A zero Gaussian draw has probability zero; redraw to stay total.
    while np.any(norms == 0.0):
        bad = norms[:, 0] == 0.0
        gauss[bad] = rng.standard_normal((int(bad.sum()), 3))
        norms = np.sqrt((gauss**2).sum(axis=1, keepdims=True))
    return gauss / norms


def sample_sphere_surface(n: int, rng: np.random.Generator) -> PointCloud:
    """``n`` points uniform on the unit sphere S^2."""
    if n < 1:
        raise ValueError("sample count must be at least 1")
    return PointCloud(_unit_directions(n, rng))


def sample_ball_interior(
    n: int, alpha: float, rng: np.random.Generator
) -> PointCloud:
    """
    Sample target-network input noise between the sphere and the ball.

    Directions are uniform on S^2 and radii are
    ``1 - alpha * (1 - U ** (1/3))``; ``alpha = 0`` is the sphere surface
    (same draws as :func:`sample_sphere_surface`), ``alpha = 1`` is the
    uniform unit ball.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if n < 1:
        raise ValueError("sample count must be at least 1")
    directions = _unit_directions(n, rng)
    u = rng.random(n)
    radius = 1.0 - alpha * (1.0 - np.cbrt(u))
    return PointCloud(directions * radius[:, None])


def _split_along(
    pts: np.ndarray, normal: np.ndarray, source_id: str
) -> PartitionedCloud:
    projections = pts @ normal
    order = np.argsort(projections, kind="stable")
    n_missing = pts.shape[0] // 2
    missing_index = np.sort(order[:n_missing])
    existing_index = np.sort(order[n_missing:])
    plane = SplitPlane(normal=normal, offset=float(np.median(projections)))
    return PartitionedCloud(
        existing=PointCloud(pts[existing_index]),
        missing=PointCloud(pts[missing_index]),
        plane=plane,
        source_id=source_id,
        existing_index=existing_index,
        missing_index=missing_index,
    )


def split_by_plane(
    cloud: CloudLike, plane: SplitPlane, source_id: str = ""
) -> PartitionedCloud:
    """
    Re-apply a stored split. Only the normal drives the partition; the
    halves are cut at the median projection, as when the plane was drawn.
    """
    pts = as_points(cloud)
    if pts.shape[0] < 2:
        raise ValueError("splitting needs at least 2 points")
    return _split_along(pts, plane.normal, source_id)


def split_random_plane(
    cloud: CloudLike, rng: np.random.Generator, source_id: str = ""
) -> PartitionedCloud:
    """
    Split into equal halves by a plane with a uniformly random normal.

    Points whose projection falls below the median go to the missing part;
    ties are broken by input index.
    """
    pts = as_points(cloud)
    if pts.shape[0] < 2:
        raise ValueError("splitting needs at least 2 points")
    normal = _unit_directions(1, rng)[0]
    return _split_along(pts, normal, source_id)


def split_left_right(
    cloud: CloudLike, axis: str = "x", source_id: str = ""
) -> PartitionedCloud:
    """Deterministic median split along a coordinate axis."""
    if axis not in AXES:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    pts = as_points(cloud)
    if pts.shape[0] < 2:
        raise ValueError("splitting needs at least 2 points")
    normal = np.zeros(3)
    normal[AXES[axis]] = 1.0
    return _split_along(pts, normal, source_id)


def rotation_matrix_vertical(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotate_vertical(cloud: CloudLike, angle: float) -> PointCloud:
    """Rotate about the vertical (y) axis by ``angle`` radians."""
    pts = as_points(cloud)
    return PointCloud(pts @ rotation_matrix_vertical(angle).T)


def resample(
    cloud: CloudLike, n: int, rng: np.random.Generator
) -> PointCloud:
    """
    Draw ``n`` points: without replacement when ``n <= len(cloud)``,
    with replacement otherwise.
    """
    pts = as_points(cloud)
    if n < 1:
        raise ValueError("sample count must be at least 1")
    replace = n > pts.shape[0]
    index = rng.choice(pts.shape[0], size=n, replace=replace)
    return PointCloud(pts[index])
