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
Using a trained model: sampling completions from the prior, fitting the
missing-part latent to extra geometric constraints, stitching parts of
different objects and exporting learned representations.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy.spatial.distance import pdist

from . import autodiff as ad
from . import distances
from .cloud import (
    CloudLike,
    PartitionedCloud,
    PointCloud,
    as_points,
    rotate_vertical,
    sample_ball_interior,
    split_random_plane,
)
from .config import EVAL_POINTS
from .dataset import Corpus
from .model import HyperPocket, build_target
from .nn import AdamState, adam_step
from .utils import substream

logger = logging.getLogger(__name__)

Constraint = Callable[[ad.Var], ad.Var]


def _sample_noise(n_points: int, rng: np.random.Generator) -> np.ndarray:
    # Trained models see the uniform ball once the noise ramp is over.
    return sample_ball_interior(n_points, 1.0, rng).points


def complete(
    model: HyperPocket,
    existing: CloudLike,
    k: int,
    sigma: float,
    n_points: int,
    rng: np.random.Generator,
    rotate: float = 0.0,
    fresh_noise: bool = False,
    threads: int = 1,
) -> List[PointCloud]:
    """
    Sample ``k`` completions of ``existing``.

    Each completion decodes ``z_e`` with its own ``r ~ N(0, sigma^2 I)``.
    The noise points ``u`` are shared by the ``k`` completions unless
    ``fresh_noise`` is set, so completions differ only through ``r`` and
    collapse onto one cloud as ``sigma`` goes to zero. ``rotate`` turns
    the input about the vertical axis before encoding.

    Raises:
        ValueError: ``k < 1``, ``sigma <= 0`` or an empty input.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    pts = as_points(existing)
    if rotate:
        pts = rotate_vertical(pts, rotate).points
    z_e = model.encode_existing(pts)
    latent = model.config.latent_size
    draws: List[Tuple[Optional[np.ndarray], np.ndarray]] = []
    shared_u = None if fresh_noise else _sample_noise(n_points, rng)
    for _ in range(k):
        r = None
        if model.variant == "full":
            r = sigma * rng.standard_normal(latent)
        u = _sample_noise(n_points, rng) if fresh_noise else shared_u
        draws.append((r, u))

    def decode(draw):
        r, u = draw
        return model.target_forward(model.decode_weights(z_e, r), u)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        return list(executor.map(decode, draws))


# -- adaptation ---------------------------------------------------------------


@dataclass(frozen=True)
class FloorConstraint:
    """Chamfer contact term between the produced object and floor points."""

    floor: PointCloud

    def __call__(self, x: ad.Var) -> ad.Var:
        return ad.chamfer(x, self.floor.points)

    def value(self, cloud: CloudLike) -> float:
        return distances.chamfer(cloud, self.floor)


def floor_constraint(floor: CloudLike) -> FloorConstraint:
    return FloorConstraint(PointCloud(as_points(floor)))


def zero_constraint(x: ad.Var) -> ad.Var:
    return ad.lift(x.tape, np.zeros(()))


def _check_constraint(constraint: Constraint):
    tape = ad.Tape()
    probe = tape.leaf(np.zeros((2, 3)), "probe")
    try:
        out = constraint(probe)
    except Exception as exc:
        raise ValueError(
            f"constraint cannot be built from autodiff primitives: {exc}"
        ) from exc
    if not isinstance(out, ad.Var) or out.tape is not tape:
        raise ValueError(
            "constraint must return a scalar recorded on the input's tape"
        )
    if out.value.shape != ():
        raise ValueError(
            f"constraint must be scalar, got shape {out.value.shape}"
        )


@dataclass
class AdaptResult:
    """
    Final latent and per-step history; entry ``i`` of each trajectory is
    measured before update ``i``, the last entry at the final latent.
    """

    r: np.ndarray
    cloud: PointCloud
    objective: List[float] = field(default_factory=list)
    consistency: List[float] = field(default_factory=list)
    constraint: List[float] = field(default_factory=list)

    def rows(self):
        return [
            [i, o, a, c]
            for i, (o, a, c) in enumerate(
                zip(self.objective, self.consistency, self.constraint)
            )
        ]


def adapt(
    model: HyperPocket,
    existing: CloudLike,
    constraint: Constraint,
    init_r: np.ndarray,
    steps: int,
    lr: float,
    rng: np.random.Generator,
    n_points: int = EVAL_POINTS,
    consistency_weight: float = 1.0,
    constraint_weight: float = 1.0,
) -> AdaptResult:
    """
    Minimize ``wc * CD(T(u), P_e) + wk * C(T(u))`` over the missing-part
    latent ``r`` with Adam, the model frozen.

    ``T`` is the target network decoded from ``z_e ⊕ r``; a fresh ``u`` is
    drawn for every step.

    Raises:
        ValueError: the model has no missing-part latent, ``init_r`` has
            the wrong length or the constraint is not differentiable.
    """
    if model.variant != "full":
        raise ValueError("adaptation needs the full variant")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    _check_constraint(constraint)
    pts = as_points(existing)
    r = np.array(init_r, dtype=np.float64).reshape(-1)
    if r.shape[0] != model.config.latent_size:
        raise ValueError(
            f"r must have length {model.config.latent_size}, "
            f"got {r.shape[0]}"
        )
    z_e = model.encode_existing(pts)
    layers = model.config.target_layers
    state = AdamState.for_params({"r": r}, lr=lr)
    result = AdaptResult(r=r, cloud=None)

    for step in range(steps + 1):
        tape = ad.Tape()
        frozen = {k: tape.leaf(v) for k, v in model.params.items()}
        r_var = tape.leaf(r, "r")
        theta = model.build_decode(frozen, z_e, r_var)
        cloud = build_target(theta, _sample_noise(n_points, rng), layers)
        consistency = ad.chamfer(cloud, pts)
        penalty = constraint(cloud)
        objective = (
            consistency_weight * consistency + constraint_weight * penalty
        )
        result.objective.append(float(objective.value))
        result.consistency.append(float(consistency.value))
        result.constraint.append(float(penalty.value))
        if step == steps:
            result.cloud = PointCloud(cloud.value)
            break
        grads = ad.backward(tape, objective)
        r = adam_step(state, {"r": r}, {"r": grads["r"]})["r"]
    result.r = r
    logger.debug(
        "Adaptation: objective %.6g -> %.6g over %d steps",
        result.objective[0],
        result.objective[-1],
        steps,
    )
    return result


def adapt_best_of(
    model: HyperPocket,
    existing: CloudLike,
    constraint: Constraint,
    steps: int,
    lr: float,
    sigma: float,
    rng: np.random.Generator,
    restarts: int = 5,
    n_points: int = EVAL_POINTS,
    consistency_weight: float = 1.0,
    constraint_weight: float = 1.0,
    threads: int = 1,
) -> AdaptResult:
    """
    Run ``restarts`` adaptations from prior samples ``r ~ N(0, sigma^2 I)``
    and keep the one with the lowest final objective (first on ties).
    """
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    latent = model.config.latent_size
    jobs = [
        (
            sigma * rng.standard_normal(latent),
            np.random.default_rng(rng.integers(0, 2**63)),
        )
        for _ in range(restarts)
    ]

    def run(job):
        init_r, job_rng = job
        return adapt(
            model,
            existing,
            constraint,
            init_r,
            steps,
            lr,
            job_rng,
            n_points=n_points,
            consistency_weight=consistency_weight,
            constraint_weight=constraint_weight,
        )

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        results = list(executor.map(run, jobs))
    finals = [res.objective[-1] for res in results]
    best = int(np.argmin(finals))
    logger.info(
        "Adaptation restarts: final objectives %s, keeping #%d",
        ", ".join(f"{v:.6g}" for v in finals),
        best,
    )
    return results[best]


def stitch(
    model: HyperPocket,
    existing_from_a: CloudLike,
    missing_from_b: CloudLike,
    n_points: int,
    rng: np.random.Generator,
) -> PointCloud:
    """One cloud from the existing part of one object and the missing
    part of another, both encoded deterministically."""
    u = _sample_noise(n_points, rng)
    out, _, _ = model.hyper_forward(
        existing_from_a, missing_from_b, u, deterministic=True
    )
    return out


# -- representations ----------------------------------------------------------


View = Tuple[str, int, PartitionedCloud]


def corpus_views(
    corpus: Corpus, split: str, views: int = 2, seed: int = 0
) -> List[View]:
    """
    ``views`` partitions per object of one corpus split: the recorded
    splits first, then random-plane splits from a per-object sub-stream.
    """
    if views < 1:
        raise ValueError("views must be at least 1")
    out: List[View] = []
    for entry in corpus.entries(split):
        cloud = corpus.load_cloud(entry)
        parts = corpus.partitions_of(entry, cloud)[:views]
        rng = substream(seed, "views", entry["id"])
        while len(parts) < views:
            parts.append(split_random_plane(cloud, rng, entry["id"]))
        out.extend((entry["id"], i, p) for i, p in enumerate(parts))
    return out


@dataclass
class Representations:
    """Latent codes and target weights per (object, split) view."""

    sample_ids: List[str]
    split_ids: List[int]
    latents: np.ndarray
    thetas: np.ndarray

    def __len__(self) -> int:
        return len(self.sample_ids)

    def distance_summary(self) -> Dict[str, np.ndarray]:
        """
        Euclidean distances between views of the same object and between
        first views of different objects, in latent and weight space.
        """
        ids = np.array(self.sample_ids)
        objects = list(dict.fromkeys(self.sample_ids))
        summary: Dict[str, np.ndarray] = {}
        spaces = (("latent", self.latents), ("theta", self.thetas))
        for space, matrix in spaces:
            same = [
                pdist(matrix[ids == obj])
                for obj in objects
                if np.count_nonzero(ids == obj) > 1
            ]
            summary[f"{space}_same"] = (
                np.concatenate(same) if same else np.empty(0)
            )
            firsts = np.array(
                [matrix[np.flatnonzero(ids == obj)[0]] for obj in objects]
            )
            summary[f"{space}_different"] = (
                pdist(firsts) if len(objects) > 1 else np.empty(0)
            )
        return summary

    def histograms(self, bins: int = 30):
        """
        Rows ``(space, kind, bin_low, bin_high, count)`` with bin edges
        shared by the same-object and different-object distances.
        """
        summary = self.distance_summary()
        rows = []
        for space in ("latent", "theta"):
            pooled = np.concatenate(
                [summary[f"{space}_same"], summary[f"{space}_different"]]
            )
            if pooled.size == 0:
                continue
            edges = np.histogram_bin_edges(pooled, bins=bins)
            for kind in ("same", "different"):
                counts, _ = np.histogram(summary[f"{space}_{kind}"], edges)
                rows.extend(
                    [space, kind, float(lo), float(hi), int(c)]
                    for lo, hi, c in zip(edges[:-1], edges[1:], counts)
                )
        return rows


def export_representations(
    model: HyperPocket, views: Sequence[View], threads: int = 1
) -> Representations:
    """Deterministic ``z_e ⊕ mu`` and ``theta`` for every view."""

    def encode(view):
        _, _, part = view
        z = model.latent(part.existing, part.missing)
        if model.variant == "full":
            half = model.config.latent_size
            theta = model.decode_weights(z[:half], z[half:])
        else:
            theta = model.decode_weights(z)
        return z, theta

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        encoded = list(executor.map(encode, views))
    if not encoded:
        raise ValueError("no views to export")
    return Representations(
        sample_ids=[v[0] for v in views],
        split_ids=[v[1] for v in views],
        latents=np.array([z for z, _ in encoded]),
        thetas=np.array([t for _, t in encoded]),
    )


def same_vs_different(reps: Representations, space: str = "theta"):
    """Median same-object and different-object distances in ``space``."""
    summary = reps.distance_summary()
    return (
        float(np.median(summary[f"{space}_same"])),
        float(np.median(summary[f"{space}_different"])),
    )

