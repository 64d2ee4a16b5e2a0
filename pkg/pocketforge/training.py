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
Objectives and the training loop.

Each sample of a batch is recorded on its own tape. Noise, reparameterization
draws and rotation angles are taken serially from the batch generator
before the per-sample work fans out to a thread pool, and gradients are
summed in sample order, so results do not depend on the worker count.
"""
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from . import autodiff as ad
from .cloud import PartitionedCloud, rotate_vertical, sample_ball_interior
from .config import TrainConfig
from .distances import chamfer_indexed
from .model import HyperPocket, build_kl
from .nn import AdamState, DivergenceError, adam_step, step_lr
from .utils import substream, write_csv

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "train_total", "train_rec", "train_kl", "val_cd", "lr")

Grads = Dict[str, np.ndarray]


@dataclass
class LossBreakdown:
    """Batch objective split into its terms; ``total = rec + lambda * kl``."""

    reconstruction: float
    kl: float
    total: float


def noise_alpha(epoch: int, ramp_epochs: int) -> float:
    """Sphere-to-ball interpolation weight, linear over ``ramp_epochs``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if ramp_epochs <= 0:
        return 1.0
    return min(1.0, epoch / ramp_epochs)


@dataclass
class _SampleInput:
    existing: np.ndarray
    missing: np.ndarray
    target: np.ndarray
    u: np.ndarray
    eps: Optional[np.ndarray]


def _prepare(
    batch: Sequence[PartitionedCloud],
    model: HyperPocket,
    config: TrainConfig,
    epoch: int,
    rng: np.random.Generator,
) -> List[_SampleInput]:
    alpha = noise_alpha(epoch, config.noise_ramp_epochs)
    inputs = []
    for part in batch:
        existing, missing = part.existing.points, part.missing.points
        target = part.full.points
        if config.augment_rotation:
            angle = rng.uniform(0.0, 2 * np.pi)
            existing = rotate_vertical(existing, angle).points
            missing = rotate_vertical(missing, angle).points
            target = rotate_vertical(target, angle).points
        u = sample_ball_interior(config.points_per_cloud, alpha, rng).points
        eps = None
        if model.variant == "full":
            eps = rng.standard_normal(model.config.latent_size)
        inputs.append(
            _SampleInput(
                existing=existing,
                missing=missing,
                target=target,
                u=u,
                eps=eps,
            )
        )
    return inputs


def _sample_objective(
    model: HyperPocket, kl_weight: float, item: _SampleInput, with_grads: bool
) -> Tuple[float, float, Optional[Grads]]:
    tape = ad.Tape()
    bound = model.bind(tape)
    points, mu, logvar = model.build_reconstruction(
        bound,
        item.existing,
        item.missing,
        item.u,
        item.eps,
    )
    rec = ad.chamfer(points, item.target)
    kl_value = 0.0
    loss = rec
    if mu is not None:
        kl = build_kl(mu, logvar)
        kl_value = float(kl.value)
        if kl_weight:
            loss = rec + kl_weight * kl
    grads = ad.backward(tape, loss) if with_grads else None
    return float(rec.value), kl_value, grads


def batch_objective(
    batch: Sequence[PartitionedCloud],
    model: HyperPocket,
    config: TrainConfig,
    epoch: int,
    rng: np.random.Generator,
    with_grads: bool = True,
) -> Tuple[LossBreakdown, Optional[Grads]]:
    """
    Sum of per-sample Chamfer (sum reduction) plus ``lambda`` times the
    summed KL, with the gradient over every model parameter.

    Raises:
        ValueError: empty batch or a variant mismatch.
        DivergenceError: the loss or a gradient is not finite.
    """
    if not batch:
        raise ValueError("batch must not be empty")
    if model.variant != config.variant:
        raise ValueError(
            f"model variant {model.variant!r} does not match "
            f"config variant {config.variant!r}"
        )
    inputs = _prepare(batch, model, config, epoch, rng)
    kl_weight = config.kl_weight
    with ThreadPoolExecutor(max_workers=config.threads) as executor:
        results = list(
            executor.map(
                lambda item: _sample_objective(
                    model, kl_weight, item, with_grads
                ),
                inputs,
            )
        )
    rec = float(sum(r for r, _, _ in results))
    kl = float(sum(k for _, k, _ in results))
    total = rec + kl_weight * kl
    if not np.isfinite(total):
        raise DivergenceError()
    grads: Optional[Grads] = None
    if with_grads:
        grads = OrderedDict(
            (name, np.zeros_like(value))
            for name, value in model.params.items()
        )
        for _, _, sample_grads in results:
            for name, g in sample_grads.items():
                grads[name] += g
    return LossBreakdown(reconstruction=rec, kl=kl, total=total), grads


def loss_hyperpocket(
    batch: Sequence[PartitionedCloud],
    model: HyperPocket,
    epoch: int,
    rng: np.random.Generator,
    config: Optional[TrainConfig] = None,
) -> LossBreakdown:
    """Reconstruction plus the KL prior on the missing-part latent."""
    config = config or TrainConfig(variant="full")
    if model.variant != "full":
        raise ValueError("loss_hyperpocket needs the full variant")
    loss, _ = batch_objective(
        batch, model, config, epoch, rng, with_grads=False
    )
    return loss


def loss_rec(
    batch: Sequence[PartitionedCloud],
    model: HyperPocket,
    epoch: int,
    rng: np.random.Generator,
    config: Optional[TrainConfig] = None,
) -> LossBreakdown:
    """Reconstruction of the full cloud from the existing part alone."""
    config = config or TrainConfig(variant="rec")
    if model.variant != "rec":
        raise ValueError("loss_rec needs the rec variant")
    loss, _ = batch_objective(
        batch, model, config, epoch, rng, with_grads=False
    )
    return LossBreakdown(loss.reconstruction, 0.0, loss.reconstruction)


def validate(
    model: HyperPocket,
    val_set: Sequence[PartitionedCloud],
    n_points: int = 2048,
    seed: int = 0,
    alpha: float = 1.0,
    threads: int = 1,
) -> float:
    """
    Mean Chamfer (mean reduction) of deterministic reconstructions.

    The missing part is encoded by its posterior mean and the noise for
    sample ``i`` comes from a fixed sub-stream, so repeated calls on an
    unchanged model agree exactly.
    """
    if not val_set:
        raise ValueError("validation set must not be empty")

    def score(indexed):
        i, part = indexed
        u = sample_ball_interior(
            n_points, alpha, substream(seed, "validate", i)
        )
        out, _, _ = model.hyper_forward(
            part.existing, part.missing, u, deterministic=True
        )
        return chamfer_indexed(out, part.full, reduction="mean")

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        scores = list(executor.map(score, enumerate(val_set)))
    return float(np.mean(scores))


@dataclass
class TrainResult:
    """
    ``model`` is the lowest-validation-CD model (the one in ``best.ckpt``);
    ``final_model`` holds the parameters after the last finished epoch.
    """

    model: HyperPocket
    final_model: Optional[HyperPocket] = None
    log: List[dict] = field(default_factory=list)
    best_val_cd: float = float("inf")
    best_epoch: Optional[int] = None


def _write_log(out: Optional[Path], log: List[dict]):
    if out is None:
        return
    write_csv(
        out / "train_log.csv",
        LOG_COLUMNS,
        [[row[c] for c in LOG_COLUMNS] for row in log],
    )


def _snapshot(model: HyperPocket) -> HyperPocket:
    params = OrderedDict((k, v.copy()) for k, v in model.params.items())
    return HyperPocket(model.config, params)


def _metadata(config: TrainConfig, epoch: int, val_cd: float) -> dict:
    return {
        "train_config": config.model_dump(mode="json", by_alias=True),
        "epoch": epoch,
        "val_cd": val_cd,
    }


def train(
    config: TrainConfig,
    train_set: Sequence[PartitionedCloud],
    val_set: Sequence[PartitionedCloud],
    model: Optional[HyperPocket] = None,
    out: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """
    Adam over all model parameters for ``config.epochs`` epochs.

    After each epoch the model is validated; the lowest validation Chamfer
    is kept as ``best.ckpt`` and the latest finished epoch as
    ``last.ckpt``. With ``epochs=0`` the initial model is written and the
    log is empty.

    Raises:
        ValueError: empty training set or a variant mismatch.
        DivergenceError: a loss, gradient or parameter stopped being
            finite; checkpoints from the last good epoch stay on disk.
    """
    if not train_set:
        raise ValueError("training set must not be empty")
    if model is None:
        model_config = config.model.model_copy(
            update={"variant": config.variant}
        )
        model = HyperPocket(
            model_config, seed=substream(config.seed, "init")
        )
    if model.variant != config.variant:
        raise ValueError(
            f"model variant {model.variant!r} does not match "
            f"config variant {config.variant!r}"
        )
    out_dir = Path(out) if out is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    result = TrainResult(model=model, final_model=model)
    logger.info(
        "Training %s variant: %d samples, %d epochs, lambda=%g",
        config.variant,
        len(train_set),
        config.epochs,
        config.lambda_,
    )
    if config.epochs == 0:
        if out_dir is not None:
            model.save(
                out_dir / "best.ckpt",
                metadata=_metadata(config, 0, float("nan")),
            )
            _write_log(out_dir, result.log)
        return result

    state = AdamState.for_params(model.params, lr=config.lr)
    for epoch in range(config.epochs):
        lr = config.lr
        if config.scheduler is not None:
            lr = step_lr(
                epoch, config.lr, config.scheduler.step, config.scheduler.gamma
            )
        state.lr = lr
        order = substream(config.seed, "shuffle", epoch).permutation(
            len(train_set)
        )
        totals = np.zeros(3)
        try:
            for b, start in enumerate(
                range(0, len(order), config.batch_size)
            ):
                batch = [
                    train_set[i]
                    for i in order[start : start + config.batch_size]
                ]
                rng = substream(config.seed, "batch", epoch, b)
                loss, grads = batch_objective(
                    batch, model, config, epoch, rng
                )
                model.params = adam_step(state, model.params, grads)
                totals += (loss.total, loss.reconstruction, loss.kl)
            val_cd = validate(
                model,
                val_set,
                config.val_points,
                seed=config.seed,
                threads=config.threads,
            )
            if not np.isfinite(val_cd):
                raise DivergenceError()
        except DivergenceError:
            logger.error("Training diverged in epoch %d", epoch)
            _write_log(out_dir, result.log)
            raise
        mean = totals / len(train_set)
        row = {
            "epoch": epoch,
            "train_total": float(mean[0]),
            "train_rec": float(mean[1]),
            "train_kl": float(mean[2]) if config.variant == "full" else 0.0,
            "val_cd": val_cd,
            "lr": float(lr),
        }
        result.log.append(row)
        logger.info(
            "Epoch %d: train %.6g (rec %.6g, kl %.6g), val CD %.6g",
            epoch,
            row["train_total"],
            row["train_rec"],
            row["train_kl"],
            val_cd,
        )
        if out_dir is not None:
            model.save(
                out_dir / "last.ckpt",
                metadata=_metadata(config, epoch, val_cd),
            )
        if val_cd < result.best_val_cd:
            result.best_val_cd = val_cd
            result.best_epoch = epoch
            result.model = _snapshot(model)
            if out_dir is not None:
                model.save(
                    out_dir / "best.ckpt",
                    metadata=_metadata(config, epoch, val_cd),
                )
        result.final_model = model
        _write_log(out_dir, result.log)
    return result
