"""Dense tensors with a reverse-mode differentiation tape.

Every operation in this module computes its forward value eagerly with numpy and
records, on the output tensor, the parents it was computed from and a rule that
maps the output gradient to parent gradients. ``backprop`` orders the recorded
graph topologically (the tape) and replays those rules from a scalar root.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .const import BATCHNORM_EPS, BATCHNORM_MOMENTUM
from .errors import (
    ContractError,
    DimensionError,
    DomainError,
    EmptyBatchError,
    LabelIndexError,
)

BackwardRule = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """N-dimensional real array taking part in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(
        self,
        data: Any,
        *,
        requires_grad: bool = False,
        dtype: Any = None,
        op: str = "leaf",
        parents: tuple[Tensor, ...] = (),
        backward: BackwardRule | None = None,
    ) -> None:
        """Wrap an array; integer input is promoted to 64-bit floats."""
        array = np.asarray(data, dtype=dtype)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = parents
        self._backward = backward

    @classmethod
    def parameter(cls, data: Any, dtype: Any = None) -> Tensor:
        """Return a trainable leaf tensor."""
        return cls(np.array(data, dtype=dtype), requires_grad=True)

    @property
    def shape(self) -> tuple[int, ...]:
        """Return the tensor extents."""
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        """Return True when the tensor was not produced by a recorded op."""
        return self._backward is None

    def item(self) -> float:
        """Return the value of a single-element tensor."""
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Return the underlying array."""
        return self.data

    def zero_grad(self) -> None:
        """Reset the gradient buffer to zeros."""
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return (
            f"Tensor(shape={self.shape}, dtype={self.data.dtype}, op={self.op}, "
            f"requires_grad={self.requires_grad})"
        )


def record_op(
    data: np.ndarray,
    parents: tuple[Tensor, ...],
    backward: BackwardRule,
    op: str,
) -> Tensor:
    """Create an op output, attaching the backward rule when a parent needs it."""
    if not any(parent.requires_grad for parent in parents):
        return Tensor(data, op=op)
    data.flags.writeable = False
    return Tensor(
        data, requires_grad=True, op=op, parents=parents, backward=backward
    )


def as_tensor(value: Tensor | np.ndarray | float) -> Tensor:
    """Return value unchanged if it is a Tensor, else wrap it as a constant."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


@dataclass
class Tape:
    """Recorded operations in topological order (parents before children)."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def trace(cls, root: Tensor) -> Tape:
        """Collect every differentiable ancestor of root in topological order."""
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def replay(self, root: Tensor) -> None:
        """Propagate d(root)/d(node) backwards through the recorded nodes."""
        pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            upstream = pending.pop(id(node), None)
            if upstream is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = (
                        upstream.copy() if node.grad is None else node.grad + upstream
                    )
                continue
            for parent, grad in zip(node._parents, node._backward(upstream)):
                if grad is None or not parent.requires_grad:
                    continue
                grad = np.asarray(grad, dtype=parent.data.dtype)
                key = id(parent)
                pending[key] = grad if key not in pending else pending[key] + grad


def backprop(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into the grad of every trainable leaf ancestor."""
    if root.data.ndim != 0:
        raise ContractError(f"backprop root must be a scalar, got shape {root.shape}")
    if not root.requires_grad:
        raise ContractError("backprop root does not depend on any trainable tensor")
    Tape.trace(root).replay(root)


def zero_grads(params: Iterable[Tensor]) -> None:
    """Reset the gradient buffer of every tensor in params."""
    for param in params:
        param.zero_grad()


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor | np.ndarray | float) -> Tensor:
    """Elementwise sum of two equally shaped tensors."""
    b = as_tensor(b)
    _require_same_shape(a, b, "add")

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return g, g

    return record_op(a.data + b.data, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor | np.ndarray) -> Tensor:
    """Elementwise product of two equally shaped tensors."""
    b = as_tensor(b)
    _require_same_shape(a, b, "mul")

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return g * b.data, g * a.data

    return record_op(a.data * b.data, (a, b), backward, "mul")


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply every element by a constant."""

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * factor,)

    return record_op(x.data * factor, (x,), backward, "scale")


def total(x: Tensor) -> Tensor:
    """Sum of all elements as a scalar tensor."""

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.broadcast_to(g, x.shape).copy(),)

    return record_op(np.asarray(x.data.sum()), (x,), backward, "sum")


def relu(x: Tensor) -> Tensor:
    """Rectified linear unit."""
    mask = x.data > 0

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * mask,)

    out = np.where(mask, x.data, 0).astype(x.data.dtype)
    return record_op(out, (x,), backward, "relu")


def flatten(x: Tensor) -> Tensor:
    """Collapse every axis after the batch axis."""
    if x.data.ndim < 1:
        raise DimensionError(f"flatten: expected a batch axis, got shape {x.shape}")
    batch = x.shape[0]

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g.reshape(x.shape),)

    return record_op(x.data.reshape(batch, -1), (x,), backward, "flatten")


def affine(input: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Fully connected layer: out[b, o] = sum_i input[b, i] * weight[o, i] + bias[o]."""
    x, w, b = input.data, weight.data, bias.data
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"affine: input shape {input.shape} incompatible with weight shape "
            f"{weight.shape}"
        )
    if b.shape != (w.shape[0],):
        raise DimensionError(
            f"affine: bias shape {bias.shape} incompatible with weight shape "
            f"{weight.shape}"
        )

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return g @ w, g.T @ x, g.sum(axis=0)

    return record_op(x @ w.T + b, (input, weight, bias), backward, "affine")


def conv2d(
    input: Tensor,
    kernels: Tensor,
    bias: Tensor,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation with zero padding (no kernel flip)."""
    x, k = input.data, kernels.data
    if x.ndim != 4 or k.ndim != 4:
        raise DimensionError(
            f"conv2d: expected 4-D input and kernels, got {input.shape} and "
            f"{kernels.shape}"
        )
    batch, channels, height, width = x.shape
    out_channels, kernel_channels, ky, kx = k.shape
    if kernel_channels != channels or ky != kx:
        raise DimensionError(
            f"conv2d: input shape {input.shape} incompatible with kernel shape "
            f"{kernels.shape}"
        )
    if bias.shape != (out_channels,):
        raise DimensionError(
            f"conv2d: bias shape {bias.shape} incompatible with kernel shape "
            f"{kernels.shape}"
        )
    if stride < 1 or padding < 0:
        raise DomainError(f"conv2d: invalid stride {stride} or padding {padding}")
    size = ky
    padded_h, padded_w = height + 2 * padding, width + 2 * padding
    if size > padded_h or size > padded_w:
        raise DimensionError(
            f"conv2d: kernel shape {kernels.shape} larger than padded input "
            f"{(batch, channels, padded_h, padded_w)}"
        )

    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (padded_h - size) // stride + 1
    out_w = (padded_w - size) // stride + 1
    windows = sliding_window_view(xp, (size, size), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(
        batch * out_h * out_w, channels * size * size
    )
    wmat = k.reshape(out_channels, -1)
    out = (cols @ wmat.T + bias.data).reshape(batch, out_h, out_w, out_channels)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        gflat = g.transpose(0, 2, 3, 1).reshape(-1, out_channels)
        gk = (gflat.T @ cols).reshape(k.shape)
        gb = gflat.sum(axis=0)
        gcols = (gflat @ wmat).reshape(batch, out_h, out_w, channels, size, size)
        gxp = np.zeros_like(xp)
        span_h, span_w = stride * out_h, stride * out_w
        for i in range(size):
            for j in range(size):
                gxp[:, :, i : i + span_h : stride, j : j + span_w : stride] += gcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding : padding + height, padding : padding + width]
        return gx, gk, gb

    return record_op(out, (input, kernels, bias), backward, "conv2d")


@dataclass
class BatchNormState:
    """Running statistics of a batch normalization layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BATCHNORM_MOMENTUM
    eps: float = BATCHNORM_EPS

    @classmethod
    def create(cls, channels: int, dtype: Any = np.float64) -> BatchNormState:
        """Return fresh statistics (mean 0, variance 1)."""
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batchnorm2d(
    input: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    *,
    training: bool,
) -> Tensor:
    """Per-channel normalization of a [B, C, H, W] tensor.

    In training mode the batch statistics normalize the input and update the
    running statistics by momentum; in eval mode the running statistics are used.
    """
    x = input.data
    if x.ndim != 4:
        raise DimensionError(f"batchnorm2d: expected 4-D input, got {input.shape}")
    batch, channels, height, width = x.shape
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(
            f"batchnorm2d: input shape {input.shape} incompatible with gamma "
            f"{gamma.shape} / beta {beta.shape}"
        )
    if batch == 0:
        raise EmptyBatchError("batchnorm2d: empty batch")
    axes = (0, 2, 3)
    count = batch * height * width
    g_b = gamma.data.reshape(1, channels, 1, 1)

    if training:
        if count < 2:
            raise DimensionError(
                f"batchnorm2d: training needs at least 2 values per channel, "
                f"got shape {input.shape}"
            )
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        momentum = state.momentum
        state.running_mean = (
            (1 - momentum) * state.running_mean + momentum * mean
        ).astype(state.running_mean.dtype)
        state.running_var = (
            (1 - momentum) * state.running_var + momentum * var * count / (count - 1)
        ).astype(state.running_var.dtype)
    else:
        mean = state.running_mean
        var = state.running_var

    inv_std = (1.0 / np.sqrt(var + state.eps)).astype(x.dtype)
    inv_std = inv_std.reshape(1, channels, 1, 1)
    xhat = (x - mean.astype(x.dtype).reshape(1, channels, 1, 1)) * inv_std
    out = xhat * g_b + beta.data.reshape(1, channels, 1, 1)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * g_b
        if not training:
            return gxhat * inv_std, ggamma, gbeta
        gx = (inv_std / count) * (
            count * gxhat
            - gxhat.sum(axis=axes, keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
        )
        return gx, ggamma, gbeta

    return record_op(out, (input, gamma, beta), backward, "batchnorm2d")


def crop2d(input: Tensor, height: int, width: int) -> Tensor:
    """Keep the leading height x width block of a [B, C, H, W] tensor."""
    x = input.data
    if x.ndim != 4 or height > x.shape[2] or width > x.shape[3]:
        raise DimensionError(
            f"crop2d: cannot crop shape {input.shape} to {(height, width)}"
        )

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        gx = np.zeros_like(x)
        gx[:, :, :height, :width] = g
        return (gx,)

    return record_op(
        np.ascontiguousarray(x[:, :, :height, :width]), (input,), backward, "crop2d"
    )


def maxpool2d(input: Tensor, window: int) -> Tensor:
    """Non-overlapping max pooling; ties route the gradient to the first element."""
    x = input.data
    if window < 1:
        raise DomainError(f"maxpool2d: window must be positive, got {window}")
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d: expected 4-D input, got {input.shape}")
    batch, channels, height, width = x.shape
    if height % window or width % window:
        raise DimensionError(
            f"maxpool2d: extents {(height, width)} not divisible by window {window}"
        )
    oh, ow = height // window, width // window
    blocks = (
        x.reshape(batch, channels, oh, window, ow, window)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(batch, channels, oh, ow, window * window)
    )
    index = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, index, axis=-1)[..., 0]

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        gblocks = np.zeros_like(blocks)
        np.put_along_axis(gblocks, index, g[..., None], axis=-1)
        gx = (
            gblocks.reshape(batch, channels, oh, ow, window, window)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(x.shape)
        )
        return (gx,)

    return record_op(out, (input,), backward, "maxpool2d")


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int] | np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    z = logits.data
    targets = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or targets.shape != (z.shape[0],):
        raise DimensionError(
            f"softmax_cross_entropy: logits shape {logits.shape} incompatible with "
            f"labels shape {targets.shape}"
        )
    batch, classes = z.shape
    if batch == 0:
        raise EmptyBatchError("softmax_cross_entropy: empty batch")
    if np.any(targets < 0) or np.any(targets >= classes):
        bad = targets[(targets < 0) | (targets >= classes)][0]
        raise LabelIndexError(f"label {bad} outside [0, {classes})")

    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(batch)
    loss = np.asarray(-log_probs[rows, targets].mean(), dtype=z.dtype)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.exp(log_probs)
        grad[rows, targets] -= 1.0
        return (grad * (g / batch),)

    return record_op(loss, (logits,), backward, "softmax_cross_entropy")
