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
A small reverse-mode automatic differentiation engine.

A :class:`Tape` is an append-only list of nodes. Each node stores its
value, the indices of its inputs and a vector-Jacobian product closure.
Because inputs always exist before the node that consumes them, the list
is already in topological order and the backward pass is a single reverse
sweep.

Primitives record the discrete choices they make (ReLU masks, max-pool and
nearest-neighbour selections) as *switches*; the gradient checker uses
them to tell smooth finite-difference stencils from ones that straddle a
kink.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple
import hashlib
import logging

import numpy as np

from .kernels import nearest_sq

logger = logging.getLogger(__name__)

Vjp = Callable[[np.ndarray], Tuple[np.ndarray, ...]]


@dataclass
class Node:
    value: np.ndarray
    parents: Tuple[int, ...] = ()
    vjp: Optional[Vjp] = None
    name: Optional[str] = None


class Tape:
    """Records one forward computation for a single backward pass."""

    def __init__(self):
        self.nodes: List[Node] = []
        self.switches: List[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value, name: Optional[str] = None) -> "Var":
        value = np.asarray(value, dtype=np.float64)
        self.nodes.append(Node(value=value, name=name))
        return Var(self, len(self.nodes) - 1)

    def bind(self, params: Mapping[str, np.ndarray]) -> Dict[str, "Var"]:
        """Create one named leaf per parameter array."""
        return {
            name: self.leaf(value, name) for name, value in params.items()
        }

    def record(
        self, value: np.ndarray, parents: Sequence["Var"], vjp: Vjp
    ) -> "Var":
        for p in parents:
            if p.tape is not self:
                raise ValueError("cannot mix variables from two tapes")
        self.nodes.append(
            Node(
                value=value,
                parents=tuple(p.index for p in parents),
                vjp=vjp,
            )
        )
        return Var(self, len(self.nodes) - 1)

    def switch(self, choice: np.ndarray) -> None:
        self.switches.append(np.asarray(choice))

    def signature(self) -> str:
        """Digest of every discrete choice made during the forward pass."""
        digest = hashlib.sha1()
        for choice in self.switches:
            digest.update(np.ascontiguousarray(choice).tobytes())
        return digest.hexdigest()

    def backward(self, loss: "Var") -> Dict[str, np.ndarray]:
        return backward(self, loss)


class Var:
    """Handle to a node on a tape."""

    __array_priority__ = 100

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(#{self.index}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None):
        return vsum(self, axis)

    @property
    def T(self):
        return transpose(self)


def tape_of(*items) -> Tape:
    for item in items:
        if isinstance(item, Var):
            return item.tape
    return Tape()


def lift(tape: Tape, x) -> Var:
    """Wrap a constant as a leaf on ``tape``; Vars pass through."""
    if isinstance(x, Var):
        return x
    return tape.leaf(x)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Var:
    tape = tape_of(a, b)
    a, b = lift(tape, a), lift(tape, b)
    sa, sb = a.shape, b.shape
    return tape.record(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Var:
    tape = tape_of(a, b)
    a, b = lift(tape, a), lift(tape, b)
    sa, sb = a.shape, b.shape
    return tape.record(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b) -> Var:
    tape = tape_of(a, b)
    a, b = lift(tape, a), lift(tape, b)
    av, bv = a.value, b.value
    return tape.record(
        av * bv,
        (a, b),
        lambda g: (
            _unbroadcast(g * bv, av.shape),
            _unbroadcast(g * av, bv.shape),
        ),
    )


def matmul(a, b) -> Var:
    """Matrix-vector, vector-matrix and matrix-matrix products."""
    tape = tape_of(a, b)
    a, b = lift(tape, a), lift(tape, b)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ValueError("matmul supports 1-D and 2-D operands only")
    if av.shape[-1] != bv.shape[0]:
        raise ValueError(f"shape mismatch: {av.shape} @ {bv.shape}")
    if av.ndim == 1 and bv.ndim == 1:
        raise ValueError("use mul and sum for inner products")

    def vjp(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 1:
            return bv @ g, np.outer(av, g)
        return np.outer(g, bv), av.T @ g

    return tape.record(av @ bv, (a, b), vjp)


def transpose(a: Var) -> Var:
    return a.tape.record(a.value.T, (a,), lambda g: (g.T,))


def relu(a: Var) -> Var:
    mask = a.value > 0
    a.tape.switch(mask)
    return a.tape.record(
        np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,)
    )


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return a.tape.record(out, (a,), lambda g: (g * out,))


def log(a: Var) -> Var:
    av = a.value
    return a.tape.record(np.log(av), (a,), lambda g: (g / av,))


def square(a: Var) -> Var:
    av = a.value
    return a.tape.record(av * av, (a,), lambda g: (2.0 * av * g,))


def vsum(a: Var, axis: Optional[int] = None) -> Var:
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return a.tape.record(
        np.asarray(a.value.sum(axis=axis)), (a,), vjp
    )


def reshape(a: Var, shape: Tuple[int, ...]) -> Var:
    original = a.shape
    return a.tape.record(
        a.value.reshape(shape), (a,), lambda g: (g.reshape(original),)
    )


def getitem(a: Var, key) -> Var:
    """Basic (slice/integer) indexing."""
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[key] = g
        return (out,)

    return a.tape.record(np.array(a.value[key]), (a,), vjp)


def concat(parts: Sequence[Var], axis: int = 0) -> Var:
    tape = tape_of(*parts)
    parts = [lift(tape, p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis)
            for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return tape.record(
        np.concatenate([p.value for p in parts], axis=axis), parts, vjp
    )


def max_rows(a: Var) -> Var:
    """Coordinate-wise maximum over rows (max pooling over points)."""
    av = a.value
    if av.ndim != 2 or av.shape[0] < 1:
        raise ValueError("max pooling needs a non-empty 2-D input")
    idx = np.argmax(av, axis=0)
    cols = np.arange(av.shape[1])
    a.tape.switch(idx)

    def vjp(g):
        out = np.zeros_like(av)
        out[idx, cols] = g
        return (out,)

    return a.tape.record(av[idx, cols], (a,), vjp)


def chamfer(x, y) -> Var:
    """
    Chamfer distance with sum reduction as a single min-reduction node.

    The backward pass treats every nearest-neighbour choice as locally
    constant, so gradient flows only along the selected pairs; ties pick
    the lowest-index neighbour.
    """
    tape = tape_of(x, y)
    x, y = lift(tape, x), lift(tape, y)
    xv, yv = x.value, y.value
    if xv.ndim != 2 or yv.ndim != 2 or xv.shape[1] != yv.shape[1]:
        raise ValueError("chamfer needs two (n, d) point sets")
    if xv.shape[0] == 0 or yv.shape[0] == 0:
        raise ValueError("empty cloud")
    d_xy, nn_xy = nearest_sq(xv, yv)
    d_yx, nn_yx = nearest_sq(yv, xv)
    tape.switch(nn_xy)
    tape.switch(nn_yx)

    def vjp(g):
        diff_xy = 2.0 * (xv - yv[nn_xy])
        diff_yx = 2.0 * (yv - xv[nn_yx])
        gx = diff_xy.copy()
        gy = diff_yx.copy()
        np.add.at(gy, nn_xy, -diff_xy)
        np.add.at(gx, nn_yx, -diff_yx)
        return g * gx, g * gy

    return tape.record(np.asarray(d_xy.sum() + d_yx.sum()), (x, y), vjp)


def backward(tape: Tape, loss: Var) -> Dict[str, np.ndarray]:
    """
    Reverse sweep from a scalar ``loss``.

    Returns:
        Gradient per named leaf; leaves the loss does not depend on get
        zeros.

    Raises:
        ValueError: the loss is not a scalar or lives on another tape.
    """
    if loss.tape is not tape:
        raise ValueError("loss belongs to a different tape")
    if loss.value.size != 1:
        raise ValueError(
            f"backward needs a scalar loss, got shape {loss.shape}"
        )
    grads: List[Optional[np.ndarray]] = [None] * len(tape.nodes)
    grads[loss.index] = np.ones_like(loss.value)
    for i in range(loss.index, -1, -1):
        g = grads[i]
        node = tape.nodes[i]
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if grads[parent] is None:
                grads[parent] = np.array(pg, dtype=np.float64)
            else:
                grads[parent] = grads[parent] + pg
    out = {}
    for i, node in enumerate(tape.nodes):
        if node.name is None:
            continue
        g = grads[i]
        out[node.name] = np.zeros_like(node.value) if g is None else g
    return out


LossFn = Callable[[Tape, Dict[str, Var]], Var]


@dataclass
class GradCheckReport:
    """Outcome of comparing autodiff gradients with finite differences."""

    max_rel_error: float
    worst_param: str
    per_param: Dict[str, float] = field(default_factory=dict)
    checked: int = 0
    skipped: int = 0

    def passed(self, tolerance: float) -> bool:
        return self.checked > 0 and self.max_rel_error < tolerance

    def per_module(self) -> Dict[str, float]:
        """Worst error per top-level name prefix (``encoder_e``, ...)."""
        worst: Dict[str, float] = {}
        for name, err in self.per_param.items():
            module = name.split(".", 1)[0]
            worst[module] = max(worst.get(module, 0.0), err)
        return worst


def _evaluate(loss_fn: LossFn, params: Mapping[str, np.ndarray]):
    tape = Tape()
    loss = loss_fn(tape, tape.bind(params))
    return tape, loss


def gradient_check(
    loss_fn: LossFn,
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    grad_hook: Optional[Callable[[Dict[str, np.ndarray]], None]] = None,
) -> GradCheckReport:
    """
    Compare :func:`backward` against central finite differences.

    ``loss_fn(tape, bound)`` must build the scalar loss from the bound
    parameter leaves. Relative error per entry is
    ``|a - n| / max(|a|, |n|, 1e-6 * max(1, |loss|))``. Stencils whose
    ``x + h`` or ``x - h`` evaluation makes a different discrete choice
    than ``x`` (a ReLU flips, a nearest neighbour changes) straddle a kink
    and are skipped. ``max_entries`` caps the entries sampled per
    parameter; ``grad_hook`` may edit the analytic gradients in place.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape, loss = _evaluate(loss_fn, params)
    base_signature = tape.signature()
    loss_value = float(loss.value)
    analytic = backward(tape, loss)
    if grad_hook is not None:
        grad_hook(analytic)
    floor = 1e-6 * max(1.0, abs(loss_value))
    rng = rng if rng is not None else np.random.default_rng(0)

    report = GradCheckReport(max_rel_error=0.0, worst_param="")
    for name, value in params.items():
        flat = value.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(
                rng.choice(flat.size, size=max_entries, replace=False)
            )
        worst = 0.0
        for k in entries:
            original = flat[k]
            flat[k] = original + h
            tape_p, loss_p = _evaluate(loss_fn, params)
            flat[k] = original - h
            tape_m, loss_m = _evaluate(loss_fn, params)
            flat[k] = original
            if (
                tape_p.signature() != base_signature
                or tape_m.signature() != base_signature
            ):
                report.skipped += 1
                continue
            numeric = (float(loss_p.value) - float(loss_m.value)) / (2 * h)
            exact = float(analytic[name].reshape(-1)[k])
            err = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            report.checked += 1
            if err > worst:
                worst = err
        report.per_param[name] = worst
        if worst >= report.max_rel_error:
            report.max_rel_error = worst
            report.worst_param = name
    logger.debug(
        "Gradient check: %d entries checked, %d skipped at kinks",
        report.checked,
        report.skipped,
    )
    return report
