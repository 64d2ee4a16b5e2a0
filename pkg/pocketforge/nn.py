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
Dense layers, the Adam optimizer, step learning-rate decay and the binary
checkpoint format.
"""
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Tuple, Union
import json
import logging
import struct

import numpy as np

from . import autodiff as ad
from .config import ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, ADAM_LR

Activation = Literal["relu", "none"]

CHECKPOINT_MAGIC = b"PFCKPT01"


class DivergenceError(RuntimeError):
    """Raised when a loss, gradient or parameter stops being finite."""

    def __init__(self, message: str = "diverged"):
        super().__init__(message)


@dataclass
class DenseLayer:
    """``activation(W x + b)`` with ``W`` of shape ``(out, in)``."""

    weights: Union[np.ndarray, ad.Var]
    biases: Union[np.ndarray, ad.Var]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


def init_dense(
    in_dim: int, out_dim: int, rng: np.random.Generator
) -> DenseLayer:
    """Uniform initialization in ``[-1/sqrt(in), 1/sqrt(in)]``."""
    bound = 1.0 / np.sqrt(in_dim)
    return DenseLayer(
        weights=rng.uniform(-bound, bound, size=(out_dim, in_dim)),
        biases=rng.uniform(-bound, bound, size=out_dim),
    )


def forward_dense(
    layer: DenseLayer, x, activation: Activation = "relu"
) -> ad.Var:
    """
    Apply a dense layer to a vector ``(in,)`` or a row batch ``(n, in)``.

    Array weights are lifted as constants on the input's tape, so the
    result is always a recorded :class:`~pocketforge.autodiff.Var`.
    """
    tape = ad.tape_of(x, layer.weights, layer.biases)
    x = ad.lift(tape, x)
    w = ad.lift(tape, layer.weights)
    b = ad.lift(tape, layer.biases)
    if x.shape[-1] != w.shape[1]:
        raise ValueError(
            f"dense layer expects input width {w.shape[1]}, "
            f"got {x.shape[-1]}"
        )
    if x.value.ndim == 1:
        out = ad.matmul(w, x) + b
    else:
        out = ad.matmul(x, ad.transpose(w)) + b
    if activation == "relu":
        return ad.relu(out)
    if activation == "none":
        return out
    raise ValueError(f"unknown activation {activation!r}")


def mlp_layers(
    prefix: str, widths: Tuple[int, ...], rng: np.random.Generator
) -> "OrderedDict[str, np.ndarray]":
    """Named parameters for a stack of dense layers."""
    params: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        layer = init_dense(a, b, rng)
        params[f"{prefix}.{i}.weight"] = layer.weights
        params[f"{prefix}.{i}.bias"] = layer.biases
    return params


def bound_layer(bound: Mapping[str, ad.Var], prefix: str, i: int):
    return DenseLayer(
        weights=bound[f"{prefix}.{i}.weight"],
        biases=bound[f"{prefix}.{i}.bias"],
    )


def forward_mlp(
    bound: Mapping[str, ad.Var],
    prefix: str,
    depth: int,
    x,
    final_activation: Activation = "none",
) -> ad.Var:
    """ReLU on hidden layers, ``final_activation`` on the last one."""
    for i in range(depth):
        act = "relu" if i < depth - 1 else final_activation
        x = forward_dense(bound_layer(bound, prefix, i), x, act)
    return x


@dataclass
class AdamState:
    """Adam moments and hyperparameters for one parameter set."""

    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0
    lr: float = ADAM_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON

    @classmethod
    def for_params(
        cls, params: Mapping[str, np.ndarray], **kwargs
    ) -> "AdamState":
        return cls(
            first_moment={k: np.zeros_like(v) for k, v in params.items()},
            second_moment={
                k: np.zeros_like(v) for k, v in params.items()
            },
            **kwargs,
        )


def adam_step(
    state: AdamState,
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
) -> "OrderedDict[str, np.ndarray]":
    """
    One bias-corrected Adam update.

    ``state`` is advanced in place; a new parameter mapping is returned.
    Parameters without a gradient entry are carried over unchanged.

    Raises:
        DivergenceError: a gradient or updated parameter is not finite.
        ValueError: shapes disagree.
    """
    for name, g in grads.items():
        if name not in params:
            raise ValueError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError()
    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    updated: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, value in params.items():
        g = grads.get(name)
        if g is None:
            updated[name] = value
            continue
        m = state.first_moment.setdefault(name, np.zeros_like(value))
        v = state.second_moment.setdefault(name, np.zeros_like(value))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        step = state.lr * (m / correction1) / (
            np.sqrt(v / correction2) + state.epsilon
        )
        new = value - step
        if not np.all(np.isfinite(new)):
            raise DivergenceError()
        updated[name] = new
    return updated


def step_lr(epoch: int, base_lr: float, step: int, gamma: float) -> float:
    """``base_lr * gamma ** (epoch // step)``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return base_lr * gamma ** (epoch // step)


# Checkpoint layout: 8-byte magic, little-endian uint64 header length,
# UTF-8 JSON header, then every array as little-endian float64 at the
# byte offset the header lists (relative to the start of the data block).


def save_checkpoint(
    path: Union[str, Path],
    params: Mapping[str, np.ndarray],
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    for name, value in params.items():
        value = np.asarray(value, dtype="<f8")
        entries.append(
            {"name": name, "shape": list(value.shape), "offset": offset}
        )
        offset += value.nbytes
    header = json.dumps(
        {"parameters": entries, "metadata": metadata or {}},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as file:
        file.write(CHECKPOINT_MAGIC)
        file.write(struct.pack("<Q", len(header)))
        file.write(header)
        for value in params.values():
            file.write(np.ascontiguousarray(value, dtype="<f8").tobytes())
    logging.info("Checkpoint written: %s", path)
    return path


def load_checkpoint(path: Union[str, Path]):
    """
    Read a checkpoint.

    Returns:
        (ordered parameter mapping, metadata dict)

    Raises:
        ValueError: the file is not a checkpoint or is truncated.
    """
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a pocketforge checkpoint")
    start = len(CHECKPOINT_MAGIC)
    try:
        (length,) = struct.unpack("<Q", blob[start : start + 8])
        header = json.loads(blob[start + 8 : start + 8 + length])
    except (struct.error, ValueError) as exc:
        raise ValueError(f"{path}: truncated checkpoint") from exc
    data = memoryview(blob)[start + 8 + length :]
    params: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for entry in header["parameters"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = entry["offset"] + 8 * count
        if end > len(data):
            raise ValueError(f"{path}: truncated checkpoint")
        params[entry["name"]] = (
            np.frombuffer(data[entry["offset"] : end], dtype="<f8")
            .astype(np.float64)
            .reshape(entry["shape"])
        )
    return params, header["metadata"]
