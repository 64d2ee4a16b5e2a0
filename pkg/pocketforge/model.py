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
The completion autoencoder.

Two point encoders map the existing part to ``z_e`` and the missing part
to a Gaussian posterior over ``z_m``. The hyper-decoder turns
``z_e ⊕ z_m`` into the flat weight vector ``theta`` of a small target
network, which maps noise points to surface points one at a time.

The ``rec`` variant drops the missing-part encoder: the decoder reads
``z_e`` alone and there is no prior on the latent.

Graph builders (``build_*``) record on a :class:`~pocketforge.autodiff.Tape`
and are shared by training, inference and gradient checks; the public
methods wrap them and return numpy arrays.
"""
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union
import json
import logging

import numpy as np

from . import autodiff as ad
from .cloud import CloudLike, PointCloud, as_points
from .config import ModelConfig, TARGET_LAYERS
from .nn import (
    DenseLayer,
    forward_dense,
    forward_mlp,
    load_checkpoint,
    mlp_layers,
    save_checkpoint,
)

logger = logging.getLogger(__name__)

Bound = Dict[str, ad.Var]


def target_param_count(layers: Tuple[int, ...] = TARGET_LAYERS) -> int:
    """Weights plus biases of a dense stack, counted layer by layer."""
    total = 0
    for fan_in, fan_out in zip(layers[:-1], layers[1:]):
        total += fan_in * fan_out + fan_out
    return total


def theta_layout(
    layers: Tuple[int, ...] = TARGET_LAYERS,
) -> List[Tuple[slice, Tuple[int, int], slice]]:
    """
    Slices of ``theta`` per target layer: layer-major, the row-major
    ``(out, in)`` weight matrix first, then the bias.
    """
    layout = []
    offset = 0
    for fan_in, fan_out in zip(layers[:-1], layers[1:]):
        w = slice(offset, offset + fan_in * fan_out)
        offset = w.stop
        b = slice(offset, offset + fan_out)
        offset = b.stop
        layout.append((w, (fan_out, fan_in), b))
    return layout


def build_target(
    theta: ad.Var, u, layers: Tuple[int, ...] = TARGET_LAYERS
) -> ad.Var:
    """Target network T_theta applied row-wise to the noise points ``u``."""
    expected = target_param_count(layers)
    if theta.value.ndim != 1 or theta.shape[0] != expected:
        raise ValueError(
            f"theta must have length {expected}, got {theta.shape}"
        )
    h = ad.lift(theta.tape, u)
    layout = theta_layout(layers)
    for i, (w_slice, shape, b_slice) in enumerate(layout):
        layer = DenseLayer(
            weights=ad.reshape(theta[w_slice], shape),
            biases=theta[b_slice],
        )
        act = "relu" if i < len(layout) - 1 else "none"
        h = forward_dense(layer, h, act)
    return h


def target_forward(
    theta, u: CloudLike, layers: Tuple[int, ...] = TARGET_LAYERS
) -> PointCloud:
    """Evaluate the target network for a fixed weight vector."""
    tape = ad.Tape()
    out = build_target(tape.leaf(theta), as_points(u), layers)
    return PointCloud(out.value)


def build_kl(mu: ad.Var, logvar: ad.Var) -> ad.Var:
    """Closed-form ``KL(N(mu, exp(logvar)) || N(0, I))`` on the tape."""
    inner = 1.0 + logvar - ad.square(mu) - ad.exp(logvar)
    return -0.5 * inner.sum()


def kl_divergence(mu, logvar) -> float:
    """``-1/2 * sum(1 + logvar - mu^2 - exp(logvar))``."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ValueError("mu and logvar must have equal lengths")
    return float(-0.5 * np.sum(1.0 + logvar - mu**2 - np.exp(logvar)))


def decoder_widths(config: ModelConfig) -> Tuple[int, ...]:
    z_size = config.latent_size * (2 if config.variant == "full" else 1)
    return (
        (z_size,)
        + tuple(config.decoder_widths)
        + (target_param_count(config.target_layers),)
    )


def layer_specs(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """``(prefix, widths)`` for every dense stack of the architecture."""
    backbone = (3,) + tuple(config.encoder_widths)
    latent = config.latent_size
    pooled = backbone[-1]
    specs = [
        ("encoder_e.backbone", backbone),
        ("encoder_e.head", (pooled, latent)),
    ]
    if config.variant == "full":
        specs += [
            ("encoder_m.backbone", backbone),
            ("encoder_m.mu", (pooled, latent)),
            ("encoder_m.logvar", (pooled, latent)),
        ]
    specs.append(("decoder", decoder_widths(config)))
    return specs


def param_shapes(config: ModelConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
    for prefix, widths in layer_specs(config):
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            shapes[f"{prefix}.{i}.weight"] = (b, a)
            shapes[f"{prefix}.{i}.bias"] = (b,)
    return shapes


class HyperPocket:
    """
    Encoders, hyper-decoder and target network with their parameters.

    Parameters live in one ordered mapping so they can be bound to a tape,
    updated by Adam and written to a checkpoint as a unit.
    """

    def __init__(
        self,
        config: Optional[ModelConfig] = None,
        params: Optional["OrderedDict[str, np.ndarray]"] = None,
        seed: Union[int, np.random.Generator] = 0,
    ):
        self.config = config or ModelConfig()
        self.theta_size = target_param_count(self.config.target_layers)
        if params is None:
            params = self.init_params(np.random.default_rng(seed))
        self.params = params
        self._check_shapes()

    # -- structure ---------------------------------------------------------

    @property
    def variant(self) -> str:
        return self.config.variant

    @property
    def backbone_widths(self) -> Tuple[int, ...]:
        return (3,) + tuple(self.config.encoder_widths)

    @property
    def decoder_widths(self) -> Tuple[int, ...]:
        return decoder_widths(self.config)

    def init_params(
        self, rng: np.random.Generator
    ) -> "OrderedDict[str, np.ndarray]":
        params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for prefix, widths in layer_specs(self.config):
            params.update(mlp_layers(prefix, widths, rng))
        return params

    def _check_shapes(self):
        expected = param_shapes(self.config)
        if list(expected) != list(self.params):
            raise ValueError(
                "parameter names do not match the architecture"
            )
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"bad shape for parameter {name!r}")
        layout = theta_layout(self.config.target_layers)
        assert layout[-1][2].stop == self.theta_size

    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    # -- graph builders ----------------------------------------------------

    def bind(self, tape: ad.Tape) -> Bound:
        return tape.bind(self.params)

    def _encoder_features(self, bound: Bound, prefix: str, pts) -> ad.Var:
        depth = len(self.backbone_widths) - 1
        per_point = forward_mlp(
            bound, f"{prefix}.backbone", depth, pts, final_activation="relu"
        )
        return ad.max_rows(per_point)

    def build_encode_existing(self, bound: Bound, pts) -> ad.Var:
        pooled = self._encoder_features(bound, "encoder_e", pts)
        return forward_mlp(bound, "encoder_e.head", 1, pooled)

    def build_encode_missing(
        self, bound: Bound, pts
    ) -> Tuple[ad.Var, ad.Var]:
        if self.variant != "full":
            raise ValueError("the rec variant has no missing-part encoder")
        pooled = self._encoder_features(bound, "encoder_m", pts)
        mu = forward_mlp(bound, "encoder_m.mu", 1, pooled)
        logvar = forward_mlp(bound, "encoder_m.logvar", 1, pooled)
        return mu, logvar

    def build_decode(self, bound: Bound, z_e, z_m=None) -> ad.Var:
        tape = ad.tape_of(z_e, z_m, *bound.values())
        size = self.config.latent_size
        parts = [ad.lift(tape, z_e)]
        if self.variant == "full":
            if z_m is None:
                raise ValueError("the full variant needs z_m")
            parts.append(ad.lift(tape, z_m))
        for part in parts:
            if part.value.ndim != 1 or part.shape[0] != size:
                raise ValueError(
                    f"latent codes must have length {size}, "
                    f"got {part.shape}"
                )
        z = ad.concat(parts) if len(parts) > 1 else parts[0]
        depth = len(self.decoder_widths) - 1
        return forward_mlp(bound, "decoder", depth, z)

    def build_reconstruction(
        self,
        bound: Bound,
        existing,
        missing,
        u,
        eps: Optional[np.ndarray] = None,
    ):
        """
        Record ``T_{D(E_e(P_e), z_m)}(u)``.

        ``eps`` is the reparameterization noise; None selects the
        posterior mean. Returns ``(points, mu, logvar)``; the last two are
        None for the rec variant.
        """
        z_e = self.build_encode_existing(bound, existing)
        mu = logvar = None
        z_m = None
        if self.variant == "full":
            mu, logvar = self.build_encode_missing(bound, missing)
            z_m = mu
            if eps is not None:
                z_m = mu + ad.exp(0.5 * logvar) * eps
        theta = self.build_decode(bound, z_e, z_m)
        points = build_target(theta, u, self.config.target_layers)
        return points, mu, logvar

    # -- numpy-level operations --------------------------------------------

    def encode_existing(self, existing: CloudLike) -> np.ndarray:
        pts = as_points(existing)
        tape = ad.Tape()
        return self.build_encode_existing(self.bind(tape), pts).value

    def encode_missing(
        self,
        missing: CloudLike,
        rng: Optional[np.random.Generator] = None,
        deterministic: bool = False,
    ):
        """
        Returns:
            ``(mu, logvar, z_m)``; ``z_m = mu`` when ``deterministic`` or
            when no generator is given.
        """
        pts = as_points(missing)
        tape = ad.Tape()
        mu, logvar = self.build_encode_missing(self.bind(tape), pts)
        mu, logvar = mu.value, logvar.value
        if deterministic or rng is None:
            return mu, logvar, mu.copy()
        eps = rng.standard_normal(mu.shape)
        return mu, logvar, mu + np.exp(0.5 * logvar) * eps

    def decode_weights(self, z_e, z_m=None) -> np.ndarray:
        tape = ad.Tape()
        return self.build_decode(self.bind(tape), z_e, z_m).value

    def target_forward(self, theta, u: CloudLike) -> PointCloud:
        return target_forward(theta, u, self.config.target_layers)

    def latent(self, existing: CloudLike, missing: CloudLike) -> np.ndarray:
        """Deterministic ``z_e ⊕ mu`` (``z_e`` alone for rec)."""
        z_e = self.encode_existing(existing)
        if self.variant != "full":
            return z_e
        mu, _, _ = self.encode_missing(missing, deterministic=True)
        return np.concatenate([z_e, mu])

    def hyper_forward(
        self,
        existing: CloudLike,
        missing: CloudLike,
        u: CloudLike,
        rng: Optional[np.random.Generator] = None,
        deterministic: bool = False,
    ):
        """
        Reconstruct the full cloud from its two parts.

        Returns:
            ``(reconstruction, mu, logvar)``; ``mu``/``logvar`` are None
            for the rec variant.
        """
        e, m, u = as_points(existing), as_points(missing), as_points(u)
        eps = None
        if self.variant == "full" and not deterministic:
            if rng is None:
                raise ValueError("sampling mode needs a generator")
            eps = rng.standard_normal(self.config.latent_size)
        tape = ad.Tape()
        points, mu, logvar = self.build_reconstruction(
            self.bind(tape), e, m, u, eps
        )
        return (
            PointCloud(points.value),
            None if mu is None else mu.value,
            None if logvar is None else logvar.value,
        )

    # -- persistence -------------------------------------------------------

    def save(
        self,
        path: Union[str, Path],
        extra: Optional["OrderedDict[str, np.ndarray]"] = None,
        metadata: Optional[dict] = None,
    ) -> Path:
        """
        Write the binary checkpoint plus a ``.json`` architecture sidecar.

        ``extra`` arrays (optimizer moments) are stored after the model
        parameters under their own names.
        """
        path = Path(path)
        arrays: "OrderedDict[str, np.ndarray]" = OrderedDict(self.params)
        if extra:
            arrays.update(extra)
        meta = {"architecture": self.config.model_dump(mode="json")}
        meta.update(metadata or {})
        save_checkpoint(path, arrays, meta)
        path.with_suffix(".json").write_text(
            json.dumps(meta["architecture"], indent=2, sort_keys=True)
            + "\n",
            encoding="utf-8",
        )
        return path

    @classmethod
    def load(cls, path: Union[str, Path]):
        """
        Returns:
            ``(model, extra arrays, metadata)``.
        """
        arrays, meta = load_checkpoint(path)
        config = ModelConfig.model_validate(meta["architecture"])
        params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name in param_shapes(config):
            if name not in arrays:
                raise ValueError(f"{path}: missing parameter {name!r}")
            params[name] = arrays.pop(name)
        return cls(config, params), arrays, meta
