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
One function per command-line subcommand.

Each pipeline takes plain arguments, derives all randomness from ``seed``
through named sub-streams and writes only below its output directory.
"""
from pathlib import Path
from typing import Dict, Optional, Union
import logging

import numpy as np

from . import autodiff as ad
from .cache import DistanceCache
from .cloud import split_random_plane
from .config import (
    AdaptConfig,
    CorpusConfig,
    ModelConfig,
    TrainConfig,
    load_config,
)
from .dataset import Corpus, build_corpus, demo_scene, mean_shape_baseline
from .distances import chamfer, chamfer_indexed, metric_fn
from .generation import (
    adapt_best_of,
    complete,
    corpus_views,
    export_representations,
    floor_constraint,
    same_vs_different,
    stitch,
)
from .metrics import (
    PER_ELEMENT_COLUMNS,
    MetricReport,
    eval_generation,
    format_cd,
    format_report,
)
from .model import HyperPocket, build_kl
from .training import TrainResult, train, validate
from .utils import (
    read_cloud,
    substream,
    write_cloud,
    write_csv,
    write_json,
    write_ply,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _write_cloud(path: Path, cloud, ply: bool):
    write_cloud(path, cloud)
    if ply:
        write_ply(path.with_suffix(".ply"), cloud)


def _open_cache(path: Optional[PathLike]) -> Optional[DistanceCache]:
    return DistanceCache(path) if path else None


def run_gen_data(
    config_path: Optional[PathLike],
    out: PathLike,
    seed: Optional[int] = None,
    threads: int = 1,
) -> Dict[str, int]:
    corpus = load_config(config_path, CorpusConfig, seed=seed)
    build_corpus(corpus, out, threads=threads)
    summary = Corpus(out).summary()
    logger.info(
        "Manifest: %s",
        ", ".join(f"{k}={v}" for k, v in summary.items()),
    )
    return summary


def run_train(
    config_path: Optional[PathLike],
    data: PathLike,
    out: PathLike,
    variant: Optional[str] = None,
    epochs: Optional[int] = None,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
) -> TrainResult:
    config = load_config(
        config_path,
        TrainConfig,
        variant=variant,
        epochs=epochs,
        seed=seed,
        threads=threads,
    )
    corpus = Corpus(data)
    result = train(
        config,
        corpus.partitions("train"),
        corpus.partitions("val"),
        out=out,
    )
    if result.best_epoch is not None:
        logger.info(
            "Best validation CD %.6g at epoch %d",
            result.best_val_cd,
            result.best_epoch,
        )
    return result


def run_complete(
    model_path: PathLike,
    input_path: PathLike,
    out: PathLike,
    k: int,
    sigma: float,
    n_points: int,
    seed: int = 0,
    rotate: float = 0.0,
    fresh_noise: bool = False,
    ply: bool = False,
    threads: int = 1,
):
    model, _, _ = HyperPocket.load(model_path)
    existing = read_cloud(input_path)
    completions = complete(
        model,
        existing,
        k,
        sigma,
        n_points,
        substream(seed, "complete"),
        rotate=rotate,
        fresh_noise=fresh_noise,
        threads=threads,
    )
    out = Path(out)
    _write_cloud(out / "input.xyz", existing, ply)
    for i, cloud in enumerate(completions):
        _write_cloud(out / f"completion_{i:03d}.xyz", cloud, ply)
    logger.info("%d completions written to %s", len(completions), out)
    return completions


def run_adapt(
    model_path: PathLike,
    out: PathLike,
    input_path: Optional[PathLike] = None,
    floor_path: Optional[PathLike] = None,
    config_path: Optional[PathLike] = None,
    seed: int = 0,
    ply: bool = False,
    threads: int = 1,
    **overrides,
):
    """
    Fit the missing-part latent to a floor. Without ``input_path`` and
    ``floor_path`` the packaged chair-with-floor scene is used.
    """
    config = load_config(config_path, AdaptConfig, **overrides)
    model, _, _ = HyperPocket.load(model_path)
    scene = None
    if input_path is None or floor_path is None:
        scene = demo_scene(seed, n_points=config.n_points)
    existing = read_cloud(input_path) if input_path else scene.existing
    floor = read_cloud(floor_path) if floor_path else scene.floor
    result = adapt_best_of(
        model,
        existing,
        floor_constraint(floor),
        config.steps,
        config.lr,
        config.sigma,
        substream(seed, "adapt"),
        restarts=config.restarts,
        n_points=config.n_points,
        consistency_weight=config.consistency_weight,
        constraint_weight=config.constraint_weight,
        threads=threads,
    )
    out = Path(out)
    _write_cloud(out / "adapted.xyz", result.cloud, ply)
    write_csv(
        out / "objective.csv",
        ("step", "objective", "consistency", "floor"),
        result.rows(),
    )
    initial, final = result.constraint[0], result.constraint[-1]
    if final > 0.5 * initial:
        logger.warning(
            "Floor term only fell from %.6g to %.6g", initial, final
        )
    return result


def _model_and_parts(model_path: PathLike, data: PathLike, split: str):
    model, _, _ = HyperPocket.load(model_path)
    parts = Corpus(data).partitions(split)
    if not parts:
        raise ValueError(f"corpus has no {split} samples")
    return model, parts


def run_eval_gen(
    model_path: PathLike,
    data: PathLike,
    out: PathLike,
    k: int,
    sigma: float,
    n_points: int,
    split: str = "test",
    seed: int = 0,
    cache_path: Optional[PathLike] = None,
    threads: int = 1,
) -> MetricReport:
    model, parts = _model_and_parts(model_path, data, split)
    report, rows = eval_generation(
        model,
        parts,
        k=k,
        sigma=sigma,
        n_points=n_points,
        seed=seed,
        cache=_open_cache(cache_path),
        threads=threads,
    )
    out = Path(out)
    write_json(out / "report.json", report.model_dump(mode="json"))
    write_csv(out / "per_element.csv", PER_ELEMENT_COLUMNS, rows)
    print(format_report(report))
    return report


def run_eval_rec(
    model_path: PathLike,
    data: PathLike,
    split: str = "val",
    n_points: int = 2048,
    seed: int = 0,
    out: Optional[PathLike] = None,
    threads: int = 1,
) -> float:
    model, parts = _model_and_parts(model_path, data, split)
    cd = validate(model, parts, n_points, seed=seed, threads=threads)
    summary = {"split": split, "cd": cd}
    if split != "train":
        summary["baseline"] = mean_shape_baseline(Corpus(data), split)
    if out is not None:
        write_json(Path(out) / f"eval_rec_{split}.json", summary)
    print(format_cd(cd))
    return cd


def _gradcheck_problem(scale: str, seed: int):
    rng = substream(seed, "gradcheck")
    if scale == "tiny":
        config, n = ModelConfig.tiny("full"), 16
    elif scale == "full":
        config, n = ModelConfig(), 64
    else:
        raise ValueError(f"unknown gradcheck scale {scale!r}")
    model = HyperPocket(config, seed=rng)
    cloud = rng.standard_normal((n, 3))
    part = split_random_plane(cloud, rng, "gradcheck")
    u = rng.standard_normal((n, 3))
    eps = rng.standard_normal(config.latent_size)
    target = part.full.points

    def loss_fn(tape: ad.Tape, bound):
        points, mu, logvar = model.build_reconstruction(
            bound, part.existing.points, part.missing.points, u, eps
        )
        return ad.chamfer(points, target) + 0.5 * build_kl(mu, logvar)

    return model, loss_fn


def run_gradcheck(
    scale: str = "tiny",
    seed: int = 0,
    inject_fault: bool = False,
    max_entries: Optional[int] = None,
) -> ad.GradCheckReport:
    """
    Compare autodiff and central differences through encoders, decoder,
    target network, Chamfer and KL.

    ``max_entries`` defaults to every entry at tiny scale and 4 sampled
    entries per parameter at full scale.
    """
    model, loss_fn = _gradcheck_problem(scale, seed)
    if max_entries is None and scale == "full":
        max_entries = 4
    hook = None
    if inject_fault:
        victim = next(reversed(model.params))

        def hook(grads):
            grads[victim] += 1.0

    report = ad.gradient_check(
        loss_fn,
        model.params,
        max_entries=max_entries,
        rng=substream(seed, "gradcheck", "entries"),
        grad_hook=hook,
    )
    print(f"max relative error: {report.max_rel_error:.3e}")
    for module, err in sorted(report.per_module().items()):
        print(f"  {module:10s} {err:.3e}")
    print(f"checked {report.checked} entries, skipped {report.skipped}")
    return report


def run_dist(
    a_path: PathLike, b_path: PathLike, metric: str, reduction: str = "sum"
) -> float:
    a, b = read_cloud(a_path), read_cloud(b_path)
    if metric == "cd":
        value = chamfer_indexed(a, b, reduction=reduction)
    elif metric == "cd-brute":
        value = chamfer(a, b, reduction=reduction)
    else:
        value = metric_fn(metric)(a, b)
    value = float(value)
    print(repr(value))
    return value


def run_stitch(
    model_path: PathLike,
    existing_path: PathLike,
    missing_path: PathLike,
    out: PathLike,
    n_points: int,
    seed: int = 0,
    ply: bool = False,
):
    model, _, _ = HyperPocket.load(model_path)
    cloud = stitch(
        model,
        read_cloud(existing_path),
        read_cloud(missing_path),
        n_points,
        substream(seed, "stitch"),
    )
    _write_cloud(Path(out) / "stitched.xyz", cloud, ply)
    return cloud


def run_export_reps(
    model_path: PathLike,
    data: PathLike,
    out: PathLike,
    split: str = "test",
    views: int = 2,
    bins: int = 30,
    seed: int = 0,
    threads: int = 1,
):
    model, _, _ = HyperPocket.load(model_path)
    reps = export_representations(
        model,
        corpus_views(Corpus(data), split, views, seed),
        threads=threads,
    )
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    np.savez(
        out / "representations.npz",
        latents=reps.latents,
        thetas=reps.thetas,
    )
    write_csv(
        out / "representations.csv",
        ("row", "sample_id", "split_id"),
        [
            [i, s, v]
            for i, (s, v) in enumerate(zip(reps.sample_ids, reps.split_ids))
        ],
    )
    summary = reps.distance_summary()
    if summary["theta_same"].size and summary["theta_different"].size:
        same, different = same_vs_different(reps)
        logger.info(
            "Median theta distance: same object %.6g, different %.6g",
            same,
            different,
        )
    write_json(
        out / "distance_summary.json",
        {
            key: {
                "count": int(values.size),
                "median": float(np.median(values)) if values.size else None,
                "mean": float(np.mean(values)) if values.size else None,
            }
            for key, values in summary.items()
        },
    )
    write_csv(
        out / "distance_histograms.csv",
        ("space", "kind", "bin_low", "bin_high", "count"),
        reps.histograms(bins),
    )
    return reps
