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
Synthetic parametric shape corpus.

Five families of objects are assembled from boxes and cylinders and
sampled uniformly by surface area. A corpus is a directory holding
``manifest.json`` and one ``clouds/<id>.xyz`` file per object; train and
validation objects carry four random-plane splits, test objects one
deterministic left/right split.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union
import logging

import numpy as np

from . import distances
from .cloud import (
    AXES,
    PartitionedCloud,
    PointCloud,
    SplitPlane,
    as_points,
    normalize_unit_sphere,
    split_by_plane,
    split_left_right,
    split_random_plane,
)
from .config import DEFAULT_THREADS, CorpusConfig
from .utils import read_cloud, read_json, substream, write_cloud, write_json

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SPLITS = ("train", "val", "test")

# Parameter names and inclusive ranges per family (object units, y up).
FAMILY_PARAMS: Dict[str, Dict[str, Tuple[float, float]]] = {
    "box_lid": {
        "width": (0.4, 1.0),
        "height": (0.3, 0.8),
        "depth": (0.4, 1.0),
        "lid_thickness": (0.03, 0.08),
        "lid_overhang": (0.0, 0.05),
    },
    "cylinder_lamp": {
        "base_radius": (0.15, 0.3),
        "pole_height": (0.5, 1.0),
        "pole_radius": (0.015, 0.03),
        "shade_radius": (0.2, 0.4),
        "shade_height": (0.15, 0.3),
    },
    "chair": {
        "seat_width": (0.4, 0.6),
        "seat_depth": (0.4, 0.6),
        "leg_length": (0.35, 0.55),
        "back_height": (0.3, 0.6),
        "leg_thickness": (0.04, 0.06),
    },
    "table": {
        "top_width": (0.8, 1.2),
        "top_depth": (0.5, 0.8),
        "height": (0.5, 0.8),
        "leg_thickness": (0.04, 0.07),
        "top_thickness": (0.03, 0.06),
    },
    "plane": {
        "fuselage_length": (1.0, 1.6),
        "fuselage_radius": (0.06, 0.12),
        "wing_span": (0.8, 1.4),
        "wing_chord": (0.15, 0.3),
        "tail_span": (0.3, 0.5),
    },
}


@dataclass(frozen=True, eq=False)
class ShapeFamily:
    """A family name and its parameter vector, in ``FAMILY_PARAMS`` order."""

    family: str
    params: np.ndarray

    def __post_init__(self):
        if self.family not in FAMILY_PARAMS:
            raise ValueError(f"unknown shape family {self.family!r}")
        params = np.asarray(self.params, dtype=np.float64).reshape(-1)
        ranges = FAMILY_PARAMS[self.family]
        if params.shape[0] != len(ranges):
            raise ValueError(
                f"{self.family} takes {len(ranges)} parameters, "
                f"got {params.shape[0]}"
            )
        for value, (name, (low, high)) in zip(params, ranges.items()):
            if not low <= value <= high:
                raise ValueError(
                    f"{self.family}.{name}={value} outside [{low}, {high}]"
                )
        object.__setattr__(self, "params", params)

    @property
    def named(self) -> Dict[str, float]:
        return dict(zip(FAMILY_PARAMS[self.family], self.params.tolist()))

    @classmethod
    def sample(cls, family: str, rng: np.random.Generator) -> "ShapeFamily":
        if family not in FAMILY_PARAMS:
            raise ValueError(f"unknown shape family {family!r}")
        ranges = np.array(list(FAMILY_PARAMS[family].values()))
        return cls(family, rng.uniform(ranges[:, 0], ranges[:, 1]))


# -- surface primitives -----------------------------------------------------


@dataclass(frozen=True)
class _Box:
    center: Tuple[float, float, float]
    size: Tuple[float, float, float]

    def faces(self):
        """(area, fixed axis, sign) for the six faces."""
        sx, sy, sz = self.size
        areas = {0: sy * sz, 1: sx * sz, 2: sx * sy}
        return [(areas[a], a, s) for a in range(3) for s in (-1.0, 1.0)]

    def area(self) -> float:
        return sum(a for a, _, _ in self.faces())

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        faces = self.faces()
        weights = np.array([a for a, _, _ in faces])
        which = rng.choice(len(faces), size=n, p=weights / weights.sum())
        half = np.asarray(self.size) / 2.0
        pts = rng.uniform(-half, half, size=(n, 3))
        for i, (_, axis, sign) in enumerate(faces):
            pts[which == i, axis] = sign * half[axis]
        return pts + np.asarray(self.center)


@dataclass(frozen=True)
class _Cylinder:
    """Closed cylinder; ``axis`` is the coordinate its height runs along."""

    center: Tuple[float, float, float]
    radius: float
    height: float
    axis: int = 1

    def area(self) -> float:
        return 2 * np.pi * self.radius * (self.height + self.radius)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        side = 2 * np.pi * self.radius * self.height
        cap = np.pi * self.radius**2
        p = np.array([side, cap, cap]) / (side + 2 * cap)
        which = rng.choice(3, size=n, p=p)
        angle = rng.uniform(0.0, 2 * np.pi, size=n)
        radius = np.where(
            which == 0, self.radius, self.radius * np.sqrt(rng.random(n))
        )
        along = np.where(
            which == 0,
            rng.uniform(-self.height / 2, self.height / 2, size=n),
            np.where(which == 1, -self.height / 2, self.height / 2),
        )
        a, b = [k for k in range(3) if k != self.axis]
        pts = np.empty((n, 3))
        pts[:, self.axis] = along
        pts[:, a] = radius * np.cos(angle)
        pts[:, b] = radius * np.sin(angle)
        return pts + np.asarray(self.center)


def _primitives(shape: ShapeFamily) -> list:
    p = shape.named
    if shape.family == "box_lid":
        w, h, d = p["width"], p["height"], p["depth"]
        t, o = p["lid_thickness"], p["lid_overhang"]
        return [
            _Box((0.0, h / 2, 0.0), (w, h, d)),
            _Box((0.0, h + t / 2, 0.0), (w + 2 * o, t, d + 2 * o)),
        ]
    if shape.family == "cylinder_lamp":
        base_h = 0.05
        pole_h = p["pole_height"]
        return [
            _Cylinder((0.0, base_h / 2, 0.0), p["base_radius"], base_h),
            _Cylinder(
                (0.0, base_h + pole_h / 2, 0.0), p["pole_radius"], pole_h
            ),
            _Cylinder(
                (0.0, base_h + pole_h, 0.0),
                p["shade_radius"],
                p["shade_height"],
            ),
        ]
    if shape.family == "chair":
        w, d = p["seat_width"], p["seat_depth"]
        legs, back, lt = p["leg_length"], p["back_height"], p["leg_thickness"]
        seat_t = 0.05
        parts = [
            _Box((0.0, legs + seat_t / 2, 0.0), (w, seat_t, d)),
            _Box(
                (0.0, legs + seat_t + back / 2, -d / 2 + seat_t / 2),
                (w, back, seat_t),
            ),
        ]
        for sx in (-1.0, 1.0):
            for sz in (-1.0, 1.0):
                parts.append(
                    _Box(
                        (sx * (w - lt) / 2, legs / 2, sz * (d - lt) / 2),
                        (lt, legs, lt),
                    )
                )
        return parts
    if shape.family == "table":
        w, d, h = p["top_width"], p["top_depth"], p["height"]
        lt, tt = p["leg_thickness"], p["top_thickness"]
        parts = [_Box((0.0, h - tt / 2, 0.0), (w, tt, d))]
        for sx in (-1.0, 1.0):
            for sz in (-1.0, 1.0):
                parts.append(
                    _Box(
                        (sx * (w - lt) / 2, (h - tt) / 2, sz * (d - lt) / 2),
                        (lt, h - tt, lt),
                    )
                )
        return parts
    # plane: fuselage along x, wings along z
    length, r = p["fuselage_length"], p["fuselage_radius"]
    span, chord, tail = p["wing_span"], p["wing_chord"], p["tail_span"]
    thin = 0.02
    tail_x = -length / 2 + chord / 4
    return [
        _Cylinder((0.0, 0.0, 0.0), r, length, axis=0),
        _Box((0.0, 0.0, 0.0), (chord, thin, span)),
        _Box((tail_x, 0.0, 0.0), (chord / 2, thin, tail)),
        _Box((tail_x, r + tail / 4, 0.0), (chord / 2, tail / 2, thin)),
    ]


def gen_shape(
    shape: ShapeFamily, n_points: int, rng: np.random.Generator
) -> PointCloud:
    """Sample ``n_points`` uniformly by area, then normalize."""
    if n_points < 1:
        raise ValueError("n_points must be at least 1")
    parts = _primitives(shape)
    areas = np.array([part.area() for part in parts])
    counts = np.bincount(
        rng.choice(len(parts), size=n_points, p=areas / areas.sum()),
        minlength=len(parts),
    )
    pts = np.concatenate(
        [part.sample(int(c), rng) for part, c in zip(parts, counts) if c]
    )
    return normalize_unit_sphere(pts[rng.permutation(n_points)])


# -- corpus -------------------------------------------------------------------


def _sample_id(family: str, split: str, index: int) -> str:
    return f"{family}-{split}-{index:04d}"


def _build_entry(
    corpus: CorpusConfig, root: Path, family: str, split: str, index: int
) -> dict:
    sample_id = _sample_id(family, split, index)
    rng = substream(corpus.seed, "corpus", family, split, index)
    shape = ShapeFamily.sample(family, rng)
    relative = f"clouds/{sample_id}.xyz"
    write_cloud(root / relative, gen_shape(shape, corpus.n_points, rng))
    # Splits are computed on the stored text so a reload reproduces them.
    cloud = read_cloud(root / relative)
    if split == "test":
        part = split_left_right(cloud, corpus.test_axis, sample_id)
        records = [{"axis": corpus.test_axis, "plane": part.plane.as_record()}]
    else:
        records = [
            {"plane": split_random_plane(cloud, rng).plane.as_record()}
            for _ in range(corpus.planes_per_sample)
        ]
    return {
        "id": sample_id,
        "family": family,
        "split": split,
        "cloud": relative,
        "params": shape.named,
        "splits": records,
    }


def build_corpus(
    corpus: CorpusConfig,
    out: PathLike,
    threads: int = DEFAULT_THREADS,
) -> dict:
    """
    Generate every object, its splits and the manifest under ``out``.

    Each object draws from its own named sub-stream, so the result does
    not depend on ``threads``.

    Raises:
        OSError: ``out`` cannot be written.
    """
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    jobs = [
        (family, split, index)
        for family, counts in sorted(corpus.families.items())
        for split in SPLITS
        for index in range(getattr(counts, split))
    ]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        entries = list(
            executor.map(lambda job: _build_entry(corpus, root, *job), jobs)
        )
    manifest = {
        "seed": corpus.seed,
        "n_points": corpus.n_points,
        "test_axis": corpus.test_axis,
        "samples": entries,
    }
    write_json(root / "manifest.json", manifest)
    logger.info(
        "Corpus built: %d samples in %d families at %s",
        len(entries),
        len(corpus.families),
        root,
    )
    return manifest


class Corpus:
    """A built corpus directory and its manifest."""

    def __init__(self, root: PathLike):
        self.root = Path(root)
        self.manifest = read_json(self.root / "manifest.json")
        ids = [entry["id"] for entry in self.manifest["samples"]]
        if len(ids) != len(set(ids)):
            raise ValueError(f"{self.root}: duplicate sample ids")

    def entries(self, split: Optional[str] = None) -> List[dict]:
        if split is not None and split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [
            e
            for e in self.manifest["samples"]
            if split is None or e["split"] == split
        ]

    def partitions(self, split: str) -> List[PartitionedCloud]:
        """Every stored (object, split) pair of one corpus split."""
        out = []
        for entry in self.entries(split):
            out.extend(self.partitions_of(entry))
        return out

    def partitions_of(
        self, entry: dict, cloud: Optional[PointCloud] = None
    ) -> List[PartitionedCloud]:
        if cloud is None:
            cloud = self.load_cloud(entry)
        return [
            _apply_record(entry, cloud, index)
            for index in range(len(entry["splits"]))
        ]

    def load_cloud(self, entry: dict) -> PointCloud:
        return read_cloud(self.root / entry["cloud"])

    def summary(self) -> Dict[str, int]:
        return {s: len(self.entries(s)) for s in SPLITS}


def _apply_record(
    entry: dict, cloud: PointCloud, split_index: int
) -> PartitionedCloud:
    records = entry["splits"]
    if not 0 <= split_index < len(records):
        raise ValueError(
            f"{entry['id']}: split index {split_index} out of range "
            f"(0..{len(records) - 1})"
        )
    record = records[split_index]
    if "axis" in record:
        if record["axis"] not in AXES:
            raise ValueError(f"{entry['id']}: bad axis {record['axis']!r}")
        return split_left_right(cloud, record["axis"], entry["id"])
    plane = SplitPlane.from_record(record["plane"])
    return split_by_plane(cloud, plane, entry["id"])


def load_sample(
    root: PathLike, entry: dict, split_index: int
) -> PartitionedCloud:
    """
    Read one object and re-apply its recorded split.

    Raises:
        OSError: the cloud file is missing.
        ValueError: malformed cloud line or split index out of range.
    """
    cloud = read_cloud(Path(root) / entry["cloud"])
    return _apply_record(entry, cloud, split_index)


def _canonical_order(pts: np.ndarray) -> np.ndarray:
    return pts[np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))]


def mean_shape_baseline(
    corpus: Corpus, split: str = "val", fit_split: str = "train"
) -> Dict[str, float]:
    """
    Per-family Chamfer of the average training cloud against ``split``.

    The average cloud is the pointwise mean of clouds whose points were
    sorted lexicographically. Values use the mean reduction; the
    ``"overall"`` key averages over every evaluated cloud.
    """
    by_family: Dict[str, List[np.ndarray]] = {}
    for entry in corpus.entries(fit_split):
        pts = as_points(corpus.load_cloud(entry))
        by_family.setdefault(entry["family"], []).append(
            _canonical_order(pts)
        )
    result: Dict[str, float] = {}
    scores: List[float] = []
    for family, clouds in sorted(by_family.items()):
        n = min(c.shape[0] for c in clouds)
        mean_cloud = np.mean([c[:n] for c in clouds], axis=0)
        family_scores = [
            distances.chamfer_indexed(
                mean_cloud, corpus.load_cloud(e), reduction="mean"
            )
            for e in corpus.entries(split)
            if e["family"] == family
        ]
        if family_scores:
            result[family] = float(np.mean(family_scores))
            scores.extend(family_scores)
    if not scores:
        raise ValueError(f"no {split} samples to evaluate the baseline on")
    result["overall"] = float(np.mean(scores))
    return result


@dataclass(frozen=True)
class DemoScene:
    """A chair missing its lower half and the floor patch it stands on."""

    full: PointCloud
    existing: PointCloud
    floor: PointCloud


def demo_scene(seed: int = 0, n_points: int = 2048, floor_points: int = 256):
    """
    Chair-with-floor scene for the adaptation demo.

    The existing part is the upper half of the chair along y; the floor
    is a square patch at the height of the leg tips, covering the chair's
    footprint.
    """
    rng = substream(seed, "demo-scene")
    shape = ShapeFamily("chair", np.array([0.5, 0.5, 0.45, 0.45, 0.05]))
    full = gen_shape(shape, n_points, rng)
    pts = full.points
    part = split_left_right(full, "y", "demo-chair")
    floor_y = pts[:, 1].min()
    low = pts[:, [0, 2]].min(axis=0)
    high = pts[:, [0, 2]].max(axis=0)
    xz = rng.uniform(low, high, size=(floor_points, 2))
    floor = np.column_stack(
        [xz[:, 0], np.full(floor_points, floor_y), xz[:, 1]]
    )
    return DemoScene(
        full=full, existing=part.existing, floor=PointCloud(floor)
    )
