"""Reverse-mode autodiff over dense float64 numpy arrays.

A Tensor wraps a row-major float64 array plus an optional gradient buffer.
Every op records its parents and a closure computing the vector-Jacobian
product, so the tape is exactly the evaluation DAG; backward() walks it in
reverse topological order and *accumulates* into `.grad` (call `zero_grad`
between steps). Only ops the hybrid model needs are provided; shapes must
match exactly except for the documented bias patterns (linear bias,
per-channel affine). No broadcasting beyond that, by design.

Conventions: conv2d uses the cross-correlation orientation (no kernel flip),
output spatial size floor((H + 2*pad - kh) / stride) + 1.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DataError, StructureError, UsageError

Array = np.ndarray


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[Array] = None
        self.requires_grad = requires_grad
        self._parents: tuple["Tensor", ...] = ()
        self._vjp: Optional[Callable[[Array], Sequence[Optional[Array]]]] = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(op={self._op}, shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def from_op(data: Array, parents: Sequence[Tensor], vjp, op: str) -> Tensor:
    """Build an op output node; the tape is recorded only if a parent needs it."""
    out = Tensor(data)
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def backward(loss: Tensor) -> None:
    """Populate .grad of every requires_grad tensor reachable from `loss`.

    Repeated calls without zero_grad accumulate, matching the usual
    gradient-accumulation contract.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward root must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tracked tensor; nothing to differentiate")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    cotangent: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = cotangent.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad = node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in cotangent:
                cotangent[id(parent)] = cotangent[id(parent)] + pg
            else:
                cotangent[id(parent)] = pg


# ---------------------------------------------------------------------------
# ops


def _want(t: Tensor) -> bool:
    return t.requires_grad


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise StructureError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise StructureError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    return from_op(a.data * b.data, (a, b),
                   lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, alpha: float) -> Tensor:
    return from_op(alpha * a.data, (a,), lambda g: (alpha * g,), "scale")


def sum_all(a: Tensor) -> Tensor:
    return from_op(np.asarray(a.data.sum()), (a,),
                   lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = a.shape
    return from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),), "reshape")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise StructureError(f"matmul needs [m,k]@[k,p], got {a.shape} @ {b.shape}")
    return from_op(a.data @ b.data, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x[N,d] @ w[out,d]^T + b[out]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise StructureError(f"linear needs x[N,d], w[out,d], got {x.shape}, {w.shape}")
    if b.shape != (w.shape[0],):
        raise StructureError(f"bias shape {b.shape} does not match out width {w.shape[0]}")
    return from_op(x.data @ w.data.T + b.data, (x, w, b),
                   lambda g: (g @ w.data, g.T @ x.data, g.sum(axis=0)), "linear")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return from_op(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return from_op(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _sigmoid(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise StructureError(f"global_avg_pool needs [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape

    def vjp(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w)).copy(),)

    return from_op(x.data.mean(axis=(2, 3)), (x,), vjp, "gap")


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Feature-axis concatenation of [N,da] and [N,db]."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise StructureError(f"concat needs matching batch dims, got {a.shape}, {b.shape}")
    da = a.shape[1]
    return from_op(np.concatenate([a.data, b.data], axis=1), (a, b),
                   lambda g: (g[:, :da], g[:, da:]), "concat")


def channel_affine(x: Tensor, scl: Tensor, bias: Tensor) -> Tensor:
    """Per-channel y = x*scale[c] + bias[c] on [N,C,H,W] (the batchnorm stand-in)."""
    if x.data.ndim != 4:
        raise StructureError(f"channel_affine needs [N,C,H,W], got {x.shape}")
    c = x.shape[1]
    if scl.shape != (c,) or bias.shape != (c,):
        raise StructureError(f"scale/bias must have shape ({c},)")
    s4 = scl.data[None, :, None, None]

    def vjp(g):
        return (g * s4, (g * x.data).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3)))

    return from_op(x.data * s4 + bias.data[None, :, None, None], (x, scl, bias), vjp, "affine")


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [N,C,H,W] with [F,C,kh,kw]."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise StructureError(f"conv2d needs 4-d input and kernel, got {x.shape}, {kernel.shape}")
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if ck != c:
        raise StructureError(f"kernel channels {ck} != input channels {c}")
    if stride < 1 or padding < 0:
        raise StructureError("stride must be >= 1 and padding >= 0")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise StructureError(
            f"kernel {kh}x{kw} does not fit {h}x{w} input with padding {padding}"
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((n, c, kh, kw, oh, ow))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    cols2 = cols.reshape(n, c * kh * kw, oh * ow)
    w2 = kernel.data.reshape(f, c * kh * kw)
    out = np.matmul(w2, cols2).reshape(n, f, oh, ow)

    def vjp(g):
        g2 = g.reshape(n, f, oh * ow)
        dw = np.matmul(g2, cols2.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape)
        dcols = np.matmul(w2.T, g2).reshape(n, c, kh, kw, oh, ow)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[:, :, i, j]
        dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        return (dx, dw)

    return from_op(out, (x, kernel), vjp, "conv2d")


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy on logits, stable for large |logit|."""
    y = labels.data if isinstance(labels, Tensor) else np.asarray(labels, dtype=np.float64)
    if logits.data.ndim != 1 or y.shape != logits.shape:
        raise StructureError(f"bce needs matching 1-d logits/labels, got {logits.shape}, {y.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DataError("labels must be binary 0/1")
    m = logits.data.size
    u = -(2.0 * y - 1.0) * logits.data
    losses = np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))

    def vjp(g):
        return (g * (_sigmoid(logits.data) - y) / m, None)

    parents = (logits, labels) if isinstance(labels, Tensor) else (logits,)
    vjp_fn = vjp if isinstance(labels, Tensor) else (lambda g: (g * (_sigmoid(logits.data) - y) / m,))
    return from_op(np.asarray(losses.mean()), parents, vjp_fn, "bce")
