"""Numerical primitives with explicit forward and reverse passes.

A Tape records executed primitives in order; backward replays them in exact
reverse order, accumulating gradients into Param.grad buffers and Node.grad
buffers.  All arithmetic is float64; float32 appears only at file
boundaries.  Forward passes are deterministic given parameters, inputs, and
the dropout generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError, StateError

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715
LAYERNORM_EPS = 1e-5


class Param:
    """Trainable array paired with a gradient accumulator."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0


class Node:
    """Activation value flowing through a tape."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = value
        self.grad = None

    def add_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g


class Tape:
    """Ordered record of executed primitives for gradient replay."""

    def __init__(self):
        self._steps = []

    def record(self, fn):
        self._steps.append(fn)

    def __len__(self):
        return len(self._steps)


def wrap(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(np.asarray(x, dtype=np.float64))


@dataclass
class DenseLayer:
    """Affine map out = x @ weight.T + bias."""

    weight: Param
    bias: Param

    @classmethod
    def create(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "DenseLayer":
        scale = math.sqrt(2.0 / (in_dim + out_dim))
        return cls(weight=Param(rng.normal(0.0, scale, size=(out_dim, in_dim))), bias=Param(np.zeros(out_dim)))

    @property
    def in_dim(self) -> int:
        return self.weight.value.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.value.shape[0]


@dataclass
class LayerNormParams:
    gain: Param
    shift: Param
    epsilon: float = LAYERNORM_EPS

    @classmethod
    def create(cls, dim: int, epsilon: float = LAYERNORM_EPS) -> "LayerNormParams":
        if epsilon <= 0:
            raise ParameterError("layernorm epsilon must be positive")
        return cls(gain=Param(np.ones(dim)), shift=Param(np.zeros(dim)))


def dense_forward(layer: DenseLayer, x, tape: Tape | None = None) -> Node:
    x = wrap(x)
    if x.value.ndim != 2 or x.value.shape[1] != layer.in_dim:
        raise ShapeError(f"dense expects (batch, {layer.in_dim}), got {x.value.shape}")
    out = Node(x.value @ layer.weight.value.T + layer.bias.value)
    if tape is not None:
        xv = x.value

        def backward():
            g = out.grad
            if g is None:
                return
            layer.weight.grad += g.T @ xv
            layer.bias.grad += g.sum(axis=0)
            x.add_grad(g @ layer.weight.value)

        tape.record(backward)
    return out


def layernorm_forward(params: LayerNormParams, x, tape: Tape | None = None) -> Node:
    x = wrap(x)
    if x.value.ndim != 2 or x.value.shape[1] < 2:
        raise ShapeError(f"layernorm needs rows of width >= 2, got {x.value.shape}")
    d = x.value.shape[1]
    mu = x.value.mean(axis=1, keepdims=True)
    xc = x.value - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + params.epsilon)
    xhat = xc * inv
    out = Node(params.gain.value * xhat + params.shift.value)
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            params.gain.grad += (g * xhat).sum(axis=0)
            params.shift.grad += g.sum(axis=0)
            dxhat = g * params.gain.value
            # d/dx of (x - mu) / sqrt(var + eps) with population variance.
            s1 = dxhat.sum(axis=1, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=1, keepdims=True)
            x.add_grad(inv / d * (d * dxhat - s1 - xhat * s2))

        tape.record(backward)
    return out


def gelu_forward(x, tape: Tape | None = None) -> Node:
    x = wrap(x)
    xv = x.value
    x2 = xv * xv  # x**3 via multiplies; np.power is far slower here
    t = np.tanh(GELU_C * (xv + GELU_A * x2 * xv))
    out = Node(0.5 * xv * (1.0 + t))
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            du = GELU_C * (1.0 + 3.0 * GELU_A * x2)
            x.add_grad(g * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du))

        tape.record(backward)
    return out


def dropout_forward(
    x,
    rate: float,
    mode: str,
    rng: np.random.Generator | None = None,
    tape: Tape | None = None,
) -> tuple[Node, np.ndarray]:
    """Inverted dropout: zero with probability ``rate``, scale survivors.

    Eval mode is the identity.  The mask comes from ``rng``, which callers
    key by (seed, epoch, batch, layer) so runs are reproducible.
    """
    x = wrap(x)
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ParameterError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        mask = np.ones_like(x.value)
        out = Node(x.value.copy())
        if tape is not None:
            def backward():
                if out.grad is not None:
                    x.add_grad(out.grad)
            tape.record(backward)
        return out, mask
    if rng is None:
        raise ParameterError("train-mode dropout needs a mask generator")
    keep = 1.0 - rate
    mask = (rng.random(x.value.shape) >= rate).astype(np.float64)
    out = Node(x.value * mask / keep)
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            x.add_grad(g * mask / keep)

        tape.record(backward)
    return out, mask


def residual_add(a: Node, b: Node, tape: Tape | None = None) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"residual add needs equal shapes, got {a.value.shape} vs {b.value.shape}")
    out = Node(a.value + b.value)
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            a.add_grad(g)
            b.add_grad(g)

        tape.record(backward)
    return out


def sq_error_mean(pred: Node, target: np.ndarray, tape: Tape | None = None) -> Node:
    """Mean over the batch of per-row squared L2 error."""
    target = np.asarray(target, dtype=np.float64)
    if pred.value.shape != target.shape:
        raise ShapeError(f"prediction {pred.value.shape} vs target {target.shape}")
    diff = pred.value - target
    n = max(1, pred.value.shape[0])
    out = Node(np.float64((diff * diff).sum() / n))
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            pred.add_grad(g * 2.0 * diff / n)

        tape.record(backward)
    return out


def affine_combine(nodes, coeffs, const: float = 0.0, tape: Tape | None = None) -> Node:
    """Scalar combination sum_i c_i * node_i + const for scalar nodes."""
    if len(nodes) != len(coeffs):
        raise ShapeError("one coefficient per node")
    out = Node(np.float64(sum(c * n.value for c, n in zip(coeffs, nodes)) + const))
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            for c, n in zip(coeffs, nodes):
                n.add_grad(g * c)

        tape.record(backward)
    return out


def backward(tape: Tape, loss: Node, seed_grad=1.0) -> None:
    """Replay the tape in reverse, seeding ``loss`` with ``seed_grad``."""
    if len(tape) == 0:
        raise StateError("backward called before any forward pass was recorded")
    loss.add_grad(np.asarray(seed_grad, dtype=np.float64))
    for step in reversed(tape._steps):
        step()
